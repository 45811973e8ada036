//! Client synchronization over the event log.
//!
//! The server is the only ordering point. Clients keep a [`Replica`] and a
//! cursor (the last seq they applied); [`Store::pull`] returns everything
//! after the cursor and [`Store::subscribe`] does the same and then keeps
//! streaming new events. Image bytes travel separately via
//! [`Store::fetch_blob`].

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use tokio::sync::mpsc::{self, error::TryRecvError, UnboundedReceiver};

use crate::error::{CoreError, Result};
use crate::event::EventRecord;
use crate::ids::{BlobHash, ProjectId};
use crate::project::ProjectState;
use crate::store::{ProjectMeta, Store, PROJECT_META_SCHEMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncCursor {
    pub project_id: ProjectId,
    pub last_seq: u64,
}

impl SyncCursor {
    pub fn start(project_id: ProjectId) -> Self {
        SyncCursor { project_id, last_seq: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullResponse {
    pub events: Vec<EventRecord>,
    pub cursor: SyncCursor,
}

impl Store {
    pub fn project_meta(&self, id: ProjectId) -> Result<ProjectMeta> {
        let handle = self.handle(id)?;
        let s = &handle.inner.read().state;
        Ok(ProjectMeta {
            schema_version: PROJECT_META_SCHEMA,
            id: s.id,
            name: s.name.clone(),
            created_at_ms: s.created_at_ms,
        })
    }

    /// Events in `(cursor.last_seq, head_seq]`.
    pub fn pull(&self, cursor: SyncCursor) -> Result<PullResponse> {
        let handle = self.handle(cursor.project_id)?;
        let inner = handle.inner.read();
        let head = inner.state.head_seq;
        if cursor.last_seq > head {
            return Err(CoreError::CursorAhead { cursor: cursor.last_seq, head });
        }
        let events = inner.log[cursor.last_seq as usize..].to_vec();
        Ok(PullResponse { events, cursor: SyncCursor { last_seq: head, ..cursor } })
    }

    /// Backfills from the cursor and then streams live events. Registration
    /// happens under the project's write lock, so no event is missed or
    /// repeated at the switch from history to live.
    pub fn subscribe(&self, cursor: SyncCursor) -> Result<Subscription> {
        let handle = self.handle(cursor.project_id)?;
        let mut inner = handle.inner.write();
        let head = inner.state.head_seq;
        if cursor.last_seq > head {
            return Err(CoreError::CursorAhead { cursor: cursor.last_seq, head });
        }
        let backlog: VecDeque<EventRecord> = inner.log[cursor.last_seq as usize..].iter().cloned().collect();
        let (tx, rx) = mpsc::unbounded_channel();
        inner.subscribers.push(tx);
        Ok(Subscription { backlog, live: rx, next_seq: cursor.last_seq + 1 })
    }

    pub fn fetch_blob(&self, hash: &BlobHash) -> Result<Vec<u8>> {
        self.blobs.get(hash)
    }
}

/// An ordered, gap-free event stream for one subscriber.
#[derive(Debug)]
pub struct Subscription {
    backlog: VecDeque<EventRecord>,
    live: UnboundedReceiver<EventRecord>,
    next_seq: u64,
}

impl Subscription {
    fn accept(&mut self, rec: EventRecord) -> EventRecord {
        debug_assert_eq!(rec.seq, self.next_seq, "subscription out of order");
        self.next_seq = rec.seq + 1;
        rec
    }

    /// Next event, waiting for one if needed. `None` once the store is gone.
    pub async fn next(&mut self) -> Option<EventRecord> {
        if let Some(rec) = self.backlog.pop_front() {
            return Some(self.accept(rec));
        }
        let rec = self.live.recv().await?;
        Some(self.accept(rec))
    }

    /// Blocking variant of [`Subscription::next`]; not for async contexts.
    pub fn blocking_next(&mut self) -> Option<EventRecord> {
        if let Some(rec) = self.backlog.pop_front() {
            return Some(self.accept(rec));
        }
        let rec = self.live.blocking_recv()?;
        Some(self.accept(rec))
    }

    /// Next event if one is ready.
    pub fn try_next(&mut self) -> Option<EventRecord> {
        if let Some(rec) = self.backlog.pop_front() {
            return Some(self.accept(rec));
        }
        match self.live.try_recv() {
            Ok(rec) => Some(self.accept(rec)),
            Err(TryRecvError::Empty | TryRecvError::Disconnected) => None,
        }
    }

    /// Seq of the last event handed out.
    pub fn last_seq(&self) -> u64 {
        self.next_seq - 1
    }
}

/// A client's local copy of a project.
#[derive(Debug, Clone, PartialEq)]
pub struct Replica {
    pub state: ProjectState,
}

impl Replica {
    pub fn new(meta: &ProjectMeta) -> Self {
        Replica { state: ProjectState::new(meta.id, meta.name.clone(), meta.created_at_ms) }
    }

    pub fn cursor(&self) -> SyncCursor {
        SyncCursor { project_id: self.state.id, last_seq: self.state.head_seq }
    }

    /// Applies pulled events; already-seen events are skipped, gaps rejected.
    pub fn apply(&mut self, events: &[EventRecord]) -> Result<()> {
        for e in events {
            if e.seq <= self.state.head_seq {
                continue;
            }
            self.state.apply(e)?;
        }
        Ok(())
    }

    pub fn sync(&mut self, store: &Store) -> Result<usize> {
        let resp = store.pull(self.cursor())?;
        self.apply(&resp.events)?;
        Ok(resp.events.len())
    }

    pub fn state_hash(&self) -> String {
        self.state.state_hash()
    }
}
