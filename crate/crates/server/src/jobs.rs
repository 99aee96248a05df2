//! Background GA runs with pollable progress.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use tokio::sync::Semaphore;
use vunwrap_core::recon::ReconSlice;
use vunwrap_core::segmentation::{optimize_with, ControlPoints, GAConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
    Cancelled,
}

/// What a poll returns, minus the fitted samples (computed on demand).
#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub id: u64,
    pub state: JobState,
    pub slice: usize,
    pub generation: usize,
    pub generations: usize,
    /// Best fitness after each finished generation.
    pub history: Vec<f64>,
    pub best: ControlPoints,
    pub smoothing: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Job {
    status: Mutex<JobStatus>,
    cancel: AtomicBool,
}

/// Every submitted job, with at most `max_running` optimising at once.
pub struct JobTable {
    jobs: Mutex<HashMap<u64, Arc<Job>>>,
    next: AtomicU64,
    slots: Arc<Semaphore>,
}

impl JobTable {
    pub fn new(max_running: usize) -> Self {
        Self {
            jobs: Mutex::new(HashMap::new()),
            next: AtomicU64::new(1),
            slots: Arc::new(Semaphore::new(max_running.max(1))),
        }
    }

    /// Queues a GA run on `slice`, loaded by `load` once a slot is free.
    pub fn submit<F>(&self, slice_index: usize, initial: ControlPoints, ga: GAConfig, smoothing: f64, load: F) -> JobStatus
    where
        F: FnOnce() -> vunwrap_core::Result<ReconSlice> + Send + 'static,
    {
        let id = self.next.fetch_add(1, Ordering::Relaxed);
        let status = JobStatus {
            id,
            state: JobState::Queued,
            slice: slice_index,
            generation: 0,
            generations: ga.generations,
            history: Vec::new(),
            best: initial.clone(),
            smoothing,
            error: None,
        };
        let job = Arc::new(Job {
            status: Mutex::new(status.clone()),
            cancel: AtomicBool::new(false),
        });
        self.jobs.lock().expect("job table").insert(id, job.clone());

        let slots = self.slots.clone();
        tokio::spawn(async move {
            let Ok(_permit) = slots.acquire_owned().await else {
                return;
            };
            if job.cancel.load(Ordering::Relaxed) {
                job.status.lock().expect("job status").state = JobState::Cancelled;
                return;
            }
            job.status.lock().expect("job status").state = JobState::Running;
            let worker = job.clone();
            let result = tokio::task::spawn_blocking(move || {
                let slice = load()?;
                optimize_with(&slice, &initial, &ga, smoothing, |g| {
                    let mut s = worker.status.lock().expect("job status");
                    s.generation = g.index;
                    s.history.push(g.best_fitness);
                    s.best = g.best.clone();
                    !worker.cancel.load(Ordering::Relaxed)
                })
            })
            .await;
            let mut s = job.status.lock().expect("job status");
            match result {
                Ok(Ok(_)) if job.cancel.load(Ordering::Relaxed) => s.state = JobState::Cancelled,
                Ok(Ok(_)) => s.state = JobState::Done,
                Ok(Err(e)) => {
                    s.state = JobState::Failed;
                    s.error = Some(e.to_string());
                }
                Err(e) => {
                    s.state = JobState::Failed;
                    s.error = Some(format!("optimizer task aborted: {e}"));
                }
            }
        });
        status
    }

    pub fn status(&self, id: u64) -> Option<JobStatus> {
        let job = self.jobs.lock().expect("job table").get(&id).cloned()?;
        let s = job.status.lock().expect("job status").clone();
        Some(s)
    }

    /// Asks a job to stop after its current generation.
    pub fn cancel(&self, id: u64) -> Option<JobStatus> {
        let job = self.jobs.lock().expect("job table").get(&id).cloned()?;
        job.cancel.store(true, Ordering::Relaxed);
        let s = job.status.lock().expect("job status").clone();
        Some(s)
    }
}
