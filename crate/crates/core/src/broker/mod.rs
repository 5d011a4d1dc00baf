//! Topic-based publish/subscribe broker.
//!
//! QoS 0 only: a message is queued once per matching session and dropped on
//! the floor when nobody is listening and it is not retained. Sequence numbers
//! are assigned per topic under the broker lock, so every subscriber sees the
//! same order.

mod net;
mod topic;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use thiserror::Error;

pub use net::{serve, BrokerClient, ClientError, ServerHandle};
pub use topic::{Topic, TopicFilter};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrokerError {
    #[error("client id `{0}` is already connected")]
    DuplicateClient(String),
    #[error("bad topic filter `{0}`")]
    BadFilter(String),
    #[error("bad topic `{0}`")]
    BadTopic(String),
    #[error("session is not live")]
    DeadSession,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub topic: Topic,
    pub payload: Vec<u8>,
    pub retain: bool,
    pub seq: u64,
}

/// Handle to a live session. Stale handles (after disconnect, or after the id
/// reconnected) are rejected with [`BrokerError::DeadSession`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    client_id: String,
    generation: u64,
}

impl Session {
    pub fn client_id(&self) -> &str {
        &self.client_id
    }
}

#[derive(Debug, Default)]
struct SessionState {
    generation: u64,
    filters: BTreeSet<TopicFilter>,
    queue: VecDeque<Message>,
    last_seq: BTreeMap<Topic, u64>,
}

impl SessionState {
    fn wants(&self, topic: &Topic) -> bool {
        self.filters.iter().any(|f| f.matches(topic))
    }

    fn enqueue(&mut self, msg: Message) {
        self.last_seq.insert(msg.topic.clone(), msg.seq);
        self.queue.push_back(msg);
    }
}

#[derive(Debug, Default)]
struct State {
    sessions: BTreeMap<String, SessionState>,
    next_generation: u64,
    seqs: BTreeMap<Topic, u64>,
    retained: BTreeMap<Topic, Message>,
}

impl State {
    fn session_mut(&mut self, s: &Session) -> Result<&mut SessionState, BrokerError> {
        self.sessions
            .get_mut(&s.client_id)
            .filter(|st| st.generation == s.generation)
            .ok_or(BrokerError::DeadSession)
    }
}

/// In-process broker. Clones share the same state.
#[derive(Debug, Clone, Default)]
pub struct Broker {
    inner: Arc<(Mutex<State>, Condvar)>,
}

impl Broker {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.inner.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn connect(&self, client_id: &str) -> Result<Session, BrokerError> {
        let mut st = self.lock();
        if st.sessions.contains_key(client_id) {
            return Err(BrokerError::DuplicateClient(client_id.into()));
        }
        st.next_generation += 1;
        let generation = st.next_generation;
        st.sessions.insert(
            client_id.into(),
            SessionState {
                generation,
                ..Default::default()
            },
        );
        Ok(Session {
            client_id: client_id.into(),
            generation,
        })
    }

    /// Drops the session and its queue. Idempotent.
    pub fn disconnect(&self, session: &Session) {
        let mut st = self.lock();
        if st.session_mut(session).is_ok() {
            st.sessions.remove(&session.client_id);
        }
        self.inner.1.notify_all();
    }

    pub fn is_live(&self, session: &Session) -> bool {
        self.lock().session_mut(session).is_ok()
    }

    /// Adds `filter` and immediately queues every retained message it matches
    /// that this session has not already received.
    pub fn subscribe(&self, session: &Session, filter: &str) -> Result<(), BrokerError> {
        let mut st = self.lock();
        st.session_mut(session)?;
        let filter = TopicFilter::new(filter)?;
        let State { sessions, retained, .. } = &mut *st;
        let sess = sessions.get_mut(&session.client_id).expect("checked above");
        for (topic, msg) in retained.iter() {
            let seen = sess.last_seq.get(topic).copied().unwrap_or(0);
            if filter.matches(topic) && msg.seq > seen {
                sess.enqueue(msg.clone());
            }
        }
        sess.filters.insert(filter);
        self.inner.1.notify_all();
        Ok(())
    }

    /// Returns the sequence number assigned, or `None` if the message was
    /// dropped (no subscriber and not retained).
    pub fn publish(
        &self,
        session: &Session,
        topic: &str,
        payload: &[u8],
        retain: bool,
    ) -> Result<Option<u64>, BrokerError> {
        let mut st = self.lock();
        st.session_mut(session)?;
        let topic = Topic::new(topic)?;
        let State {
            sessions,
            seqs,
            retained,
            ..
        } = &mut *st;
        let targets: Vec<&mut SessionState> = sessions.values_mut().filter(|s| s.wants(&topic)).collect();
        if targets.is_empty() && !retain {
            return Ok(None);
        }
        let seq = seqs.entry(topic.clone()).or_insert(0);
        *seq += 1;
        let msg = Message {
            topic: topic.clone(),
            payload: payload.to_vec(),
            retain,
            seq: *seq,
        };
        for sess in targets {
            sess.enqueue(msg.clone());
        }
        if retain {
            retained.insert(topic, msg.clone());
        }
        self.inner.1.notify_all();
        Ok(Some(msg.seq))
    }

    pub fn poll(&self, session: &Session) -> Result<Option<Message>, BrokerError> {
        Ok(self.lock().session_mut(session)?.queue.pop_front())
    }

    /// Blocks until a message arrives, the session dies, or `timeout` passes.
    pub fn poll_timeout(&self, session: &Session, timeout: Duration) -> Result<Option<Message>, BrokerError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.lock();
        loop {
            if let Some(msg) = st.session_mut(session)?.queue.pop_front() {
                return Ok(Some(msg));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            st = self
                .inner
                .1
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    pub fn drain(&self, session: &Session) -> Result<Vec<Message>, BrokerError> {
        Ok(self.lock().session_mut(session)?.queue.drain(..).collect())
    }

    pub fn retained(&self, topic: &str) -> Option<Message> {
        let topic = Topic::new(topic).ok()?;
        self.lock().retained.get(&topic).cloned()
    }

    /// Last sequence number assigned on `topic` (0 if none).
    pub fn last_seq(&self, topic: &str) -> u64 {
        Topic::new(topic)
            .ok()
            .and_then(|t| self.lock().seqs.get(&t).copied())
            .unwrap_or(0)
    }

    pub fn session_count(&self) -> usize {
        self.lock().sessions.len()
    }
}
