//! Registry of propagation jobs. All mutation goes through one registry
//! value guarded by the server's mutex, so status changes are serialized.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
    Canceled,
}

impl JobStatus {
    fn rank(self) -> u8 {
        match self {
            JobStatus::Queued => 0,
            JobStatus::Running => 1,
            JobStatus::Done | JobStatus::Failed | JobStatus::Canceled => 2,
        }
    }

    pub fn is_terminal(self) -> bool {
        self.rank() == 2
    }

    /// Forward moves only: queued -> running -> terminal, or queued
    /// straight to canceled/failed.
    pub fn can_become(self, next: JobStatus) -> bool {
        next.rank() > self.rank()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: u64,
    pub kind: String,
    pub volume_id: String,
    pub status: JobStatus,
    /// SHA-256 of the canonical request.
    pub inputs_digest: String,
    /// Where the result can be fetched once done.
    pub output: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum JobError {
    #[error("unknown job {0}")]
    NotFound(u64),
    #[error("volume {volume} already has active job {job}")]
    Busy { volume: String, job: u64 },
    #[error("job {id} cannot move from {from:?} to {to:?}")]
    InvalidTransition { id: u64, from: JobStatus, to: JobStatus },
    #[error("job {0} has already finished")]
    Finished(u64),
}

#[derive(Debug, Default)]
pub struct JobRegistry {
    jobs: BTreeMap<u64, JobRecord>,
    cancel: BTreeMap<u64, Arc<AtomicBool>>,
    next_id: u64,
}

impl JobRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: u64) -> Option<&JobRecord> {
        self.jobs.get(&id)
    }

    pub fn active_for(&self, volume_id: &str) -> Option<&JobRecord> {
        self.jobs.values().find(|j| j.volume_id == volume_id && !j.status.is_terminal())
    }

    /// Queues a job unless the volume already has a queued or running one.
    pub fn submit(&mut self, kind: &str, volume_id: &str, inputs_digest: String) -> Result<(JobRecord, Arc<AtomicBool>), JobError> {
        if let Some(j) = self.active_for(volume_id) {
            return Err(JobError::Busy { volume: volume_id.to_string(), job: j.id });
        }
        self.next_id += 1;
        let rec = JobRecord {
            id: self.next_id,
            kind: kind.to_string(),
            volume_id: volume_id.to_string(),
            status: JobStatus::Queued,
            inputs_digest,
            output: None,
            error: None,
        };
        let flag = Arc::new(AtomicBool::new(false));
        self.jobs.insert(rec.id, rec.clone());
        self.cancel.insert(rec.id, flag.clone());
        Ok((rec, flag))
    }

    pub fn transition(&mut self, id: u64, to: JobStatus) -> Result<&mut JobRecord, JobError> {
        let job = self.jobs.get_mut(&id).ok_or(JobError::NotFound(id))?;
        if !job.status.can_become(to) {
            return Err(JobError::InvalidTransition { id, from: job.status, to });
        }
        job.status = to;
        if to.is_terminal() {
            self.cancel.remove(&id);
        }
        Ok(job)
    }

    /// Queued jobs are canceled at once; running jobs get their cancel flag
    /// raised and finish as canceled when the worker notices.
    pub fn cancel(&mut self, id: u64) -> Result<JobRecord, JobError> {
        let status = self.jobs.get(&id).ok_or(JobError::NotFound(id))?.status;
        match status {
            JobStatus::Queued => {
                if let Some(f) = self.cancel.get(&id) {
                    f.store(true, Ordering::SeqCst);
                }
                Ok(self.transition(id, JobStatus::Canceled)?.clone())
            }
            JobStatus::Running => {
                if let Some(f) = self.cancel.get(&id) {
                    f.store(true, Ordering::SeqCst);
                }
                Ok(self.jobs[&id].clone())
            }
            _ => Err(JobError::Finished(id)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ALL: [JobStatus; 5] = [JobStatus::Queued, JobStatus::Running, JobStatus::Done, JobStatus::Failed, JobStatus::Canceled];

    #[test]
    fn one_active_job_per_volume() {
        let mut r = JobRegistry::new();
        let (a, _) = r.submit("samonai", "v1", "d".into()).unwrap();
        assert_eq!(r.submit("samonai", "v1", "d".into()).unwrap_err(), JobError::Busy { volume: "v1".into(), job: a.id });
        assert!(r.submit("samonai", "v2", "d".into()).is_ok());
        r.transition(a.id, JobStatus::Running).unwrap();
        r.transition(a.id, JobStatus::Done).unwrap();
        assert!(r.submit("samonai", "v1", "d".into()).is_ok());
    }

    #[test]
    fn cancel_paths() {
        let mut r = JobRegistry::new();
        let (q, flag) = r.submit("samonai", "v", "d".into()).unwrap();
        assert_eq!(r.cancel(q.id).unwrap().status, JobStatus::Canceled);
        assert!(flag.load(Ordering::SeqCst));
        let (j, flag) = r.submit("samonai", "v", "d".into()).unwrap();
        r.transition(j.id, JobStatus::Running).unwrap();
        assert_eq!(r.cancel(j.id).unwrap().status, JobStatus::Running);
        assert!(flag.load(Ordering::SeqCst));
        r.transition(j.id, JobStatus::Canceled).unwrap();
        assert_eq!(r.cancel(j.id), Err(JobError::Finished(j.id)));
        assert_eq!(r.cancel(99), Err(JobError::NotFound(99)));
    }

    proptest! {
        #[test]
        fn statuses_never_move_backward(steps in prop::collection::vec(0usize..5, 0..12)) {
            let mut r = JobRegistry::new();
            let (j, _) = r.submit("samonai", "v", "d".into()).unwrap();
            let mut seen = vec![JobStatus::Queued];
            for s in steps {
                let before = r.get(j.id).unwrap().status;
                let ok = r.transition(j.id, ALL[s]).is_ok();
                let after = r.get(j.id).unwrap().status;
                prop_assert_eq!(ok, before.can_become(ALL[s]));
                prop_assert!(after.rank() >= before.rank());
                seen.push(after);
            }
            prop_assert!(seen.windows(2).all(|w| w[0] == w[1] || w[0].can_become(w[1])));
        }
    }
}
