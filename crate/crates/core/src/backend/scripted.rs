use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{Backend, BackendError, GenRequest, GenResponse};

type Responder = dyn Fn(&GenRequest, usize) -> Result<String, BackendError> + Send + Sync;

/// Test double answering from a function of (request, call index) or from a
/// fixed queue.
pub struct ScriptedBackend {
    responder: Box<Responder>,
    calls: AtomicUsize,
    log: Mutex<Vec<GenRequest>>,
}

impl ScriptedBackend {
    pub fn new(f: impl Fn(&GenRequest, usize) -> Result<String, BackendError> + Send + Sync + 'static) -> Self {
        Self { responder: Box::new(f), calls: AtomicUsize::new(0), log: Mutex::new(Vec::new()) }
    }

    /// Replies in order; errors once the queue is empty.
    pub fn queue<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        let q: Mutex<VecDeque<String>> = Mutex::new(replies.into_iter().map(Into::into).collect());
        Self::new(move |_, _| {
            q.lock()
                .unwrap_or_else(|e| e.into_inner())
                .pop_front()
                .ok_or_else(|| BackendError::Other("script exhausted".into()))
        })
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<GenRequest> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        let i = self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(req.clone());
        (self.responder)(req, i).map(GenResponse::text)
    }
}
