use super::CriticError;
use crate::model::KvCache;
use crate::scalar::Real;

/// `n_c = min(max(m, ⌊(1-r)·n⌋), n-1)`.
pub fn retain_count(n: usize, r: f64, m: usize) -> Result<usize, CriticError> {
    if n < 2 {
        return Err(CriticError::TooFew(n));
    }
    let keep = ((1.0 - r) * n as f64).floor().max(0.0) as usize;
    Ok(keep.max(m).min(n - 1))
}

/// `min(r_base + α·M_used/M_total, r_max)`.
pub fn adaptive_ratio(r_base: f64, adapt_alpha: f64, mem_used: f64, mem_total: f64, r_max: f64) -> Result<f64, CriticError> {
    if !(mem_total > 0.0) {
        return Err(CriticError::MemTotal);
    }
    Ok((r_base + adapt_alpha * mem_used.max(0.0) / mem_total).min(r_max))
}

pub fn should_compress(total_processed: usize, m: usize) -> bool {
    total_processed > m
}

/// Indices of the `n_c` highest scores, ties to the more recent index,
/// returned in increasing order.
pub fn select_retained<T: Real>(scores: &[T], n_c: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(b.cmp(&a)));
    idx.truncate(n_c);
    idx.sort_unstable();
    idx
}

/// Keeps `n_c` tokens per layer, chosen by that layer's scores. Positions are
/// carried over unchanged.
pub fn compress_cache<T: Real>(cache: &mut KvCache<T>, scores: &[Vec<T>], n_c: usize) -> Result<(), CriticError> {
    if scores.len() != cache.num_layers() {
        return Err(CriticError::Mismatch(format!("{} score vectors for {} layers", scores.len(), cache.num_layers())));
    }
    for (l, s) in scores.iter().enumerate() {
        if s.len() != cache.layers[l].len() {
            return Err(CriticError::Mismatch(format!("layer {l}: {} scores for {} tokens", s.len(), cache.layers[l].len())));
        }
    }
    for (l, s) in scores.iter().enumerate() {
        let keep = select_retained(s, n_c);
        cache.retain(l, &keep).map_err(|e| CriticError::Mismatch(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retain_examples() {
        assert_eq!(retain_count(100, 0.3, 10).unwrap(), 70);
        assert_eq!(retain_count(5, 0.9, 10).unwrap(), 4);
        assert_eq!(retain_count(2, 0.5, 1).unwrap(), 1);
        assert!(retain_count(1, 0.5, 1).is_err());
    }

    #[test]
    fn adaptive_examples() {
        assert_eq!(adaptive_ratio(0.2, 0.3, 0.0, 10.0, 0.5).unwrap(), 0.2);
        assert_eq!(adaptive_ratio(0.2, 0.3, 10.0, 10.0, 0.5).unwrap(), 0.5);
        assert!((adaptive_ratio(0.2, 0.2, 5.0, 10.0, 0.5).unwrap() - 0.3).abs() < 1e-12);
        assert!(adaptive_ratio(0.2, 0.2, 5.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn activation_threshold() {
        assert!(!should_compress(10, 10));
        assert!(should_compress(11, 10));
        assert!(!should_compress(0, 10));
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_retained(&[0.9f64, 0.1, 0.8, 0.7], 2), vec![0, 2]);
        assert_eq!(select_retained(&[0.5f64; 4], 2), vec![2, 3]);
    }
}
