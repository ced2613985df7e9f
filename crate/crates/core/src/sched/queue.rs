use std::collections::{HashMap, VecDeque};

use crate::playback::{MalformedProgram, PlaybackProgram};

use super::proto::JobStatus;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Job {
    pub id: u64,
    pub user: String,
    /// 0 is highest.
    pub priority: u8,
    pub program: PlaybackProgram,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub status: JobStatus,
    /// Serialized `ExecutionResult`, possibly partial for failed jobs.
    pub result: Vec<u8>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Entry {
    Queued,
    Running,
    Finished(Outcome),
}

/// Per-user priority queues served round-robin over users.
///
/// Users are kept in order of first submission. Each `next_job` scans from
/// the user after the last-served one and takes the head of the first
/// non-empty queue.
#[derive(Debug, Default)]
pub struct QueueState {
    users: Vec<String>,
    queues: HashMap<String, VecDeque<Job>>,
    cursor: Option<usize>,
    running: Option<u64>,
    jobs: HashMap<u64, Entry>,
    next_id: u64,
}

impl QueueState {
    pub fn new() -> Self {
        Self {
            next_id: 1,
            ..Self::default()
        }
    }

    pub fn submit(&mut self, user: &str, priority: u8, program_bytes: &[u8]) -> Result<u64, MalformedProgram> {
        let program = PlaybackProgram::from_bytes(program_bytes)?;
        Ok(self.enqueue(user, priority, program))
    }

    pub fn enqueue(&mut self, user: &str, priority: u8, program: PlaybackProgram) -> u64 {
        let id = self.next_id.max(1);
        self.next_id = id + 1;
        if !self.queues.contains_key(user) {
            self.users.push(user.to_string());
            self.queues.insert(user.to_string(), VecDeque::new());
        }
        let q = self.queues.get_mut(user).expect("queue exists");
        let pos = q.iter().position(|j| j.priority > priority).unwrap_or(q.len());
        q.insert(
            pos,
            Job {
                id,
                user: user.to_string(),
                priority,
                program,
            },
        );
        self.jobs.insert(id, Entry::Queued);
        id
    }

    /// Dequeue the next job and mark it running.
    pub fn next_job(&mut self) -> Option<Job> {
        let n = self.users.len();
        let start = self.cursor.map_or(0, |c| c + 1);
        for k in 0..n {
            let idx = (start + k) % n;
            if let Some(job) = self.queues.get_mut(&self.users[idx]).and_then(VecDeque::pop_front) {
                self.cursor = Some(idx);
                self.running = Some(job.id);
                self.jobs.insert(job.id, Entry::Running);
                return Some(job);
            }
        }
        None
    }

    pub fn complete(&mut self, job_id: u64, outcome: Outcome) {
        if self.running == Some(job_id) {
            self.running = None;
        }
        if let Some(e) = self.jobs.get_mut(&job_id) {
            if !matches!(e, Entry::Finished(_)) {
                *e = Entry::Finished(outcome);
            }
        }
    }

    pub fn status(&self, job_id: u64) -> Option<(JobStatus, Option<&Outcome>)> {
        self.jobs.get(&job_id).map(|e| match e {
            Entry::Queued => (JobStatus::Queued, None),
            Entry::Running => (JobStatus::Running, None),
            Entry::Finished(o) => (o.status, Some(o)),
        })
    }

    pub fn running(&self) -> Option<u64> {
        self.running
    }

    pub fn queued_len(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn finished_len(&self) -> usize {
        self.jobs.values().filter(|e| matches!(e, Entry::Finished(_))).count()
    }

    pub fn submitted(&self) -> usize {
        self.jobs.len()
    }

    /// Users whose queue is non-empty.
    pub fn waiting_users(&self) -> Vec<&str> {
        self.users
            .iter()
            .filter(|u| self.queues.get(*u).is_some_and(|q| !q.is_empty()))
            .map(String::as_str)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::playback::PlaybackProgramBuilder;

    fn halt() -> PlaybackProgram {
        PlaybackProgramBuilder::new().done()
    }

    fn order(q: &mut QueueState) -> Vec<u64> {
        std::iter::from_fn(|| {
            let j = q.next_job()?;
            q.complete(
                j.id,
                Outcome {
                    status: JobStatus::Done,
                    result: vec![],
                    message: String::new(),
                },
            );
            Some(j.id)
        })
        .collect()
    }

    #[test]
    fn round_robin_two_users() {
        let mut q = QueueState::new();
        let a1 = q.enqueue("A", 0, halt());
        let a2 = q.enqueue("A", 0, halt());
        let b1 = q.enqueue("B", 0, halt());
        assert_eq!(a1, 1);
        assert_eq!(order(&mut q), vec![a1, b1, a2]);
    }

    #[test]
    fn priority_within_user_is_stable() {
        let mut q = QueueState::new();
        let x = q.enqueue("A", 5, halt());
        let y = q.enqueue("A", 1, halt());
        let z = q.enqueue("A", 5, halt());
        let w = q.enqueue("A", 1, halt());
        assert_eq!(order(&mut q), vec![y, w, x, z]);
    }

    #[test]
    fn late_user_served_next() {
        let mut q = QueueState::new();
        let sweep: Vec<u64> = (0..50).map(|_| q.enqueue("A", 0, halt())).collect();
        let first = q.next_job().unwrap();
        assert_eq!(first.id, sweep[0]);
        let b = q.enqueue("B", 0, halt());
        assert_eq!(q.next_job().unwrap().id, b);
    }

    #[test]
    fn statuses() {
        let mut q = QueueState::new();
        assert!(q.submit("A", 0, b"junk").is_err());
        let id = q.submit("A", 0, &halt().to_bytes()).unwrap();
        assert_eq!(q.status(id).unwrap().0, JobStatus::Queued);
        q.next_job();
        assert_eq!(q.status(id).unwrap().0, JobStatus::Running);
        assert_eq!(q.running(), Some(id));
        q.complete(
            id,
            Outcome {
                status: JobStatus::Failed,
                result: vec![1],
                message: "x".into(),
            },
        );
        assert_eq!(q.status(id).unwrap().0, JobStatus::Failed);
        assert!(q.status(99).is_none());
    }
}
