//! Event constructors for unit-test fixtures.

use crate::corpus::{Event, EventKind};

pub fn post(id: &str, author: &str, community: &str, t: i64, body: &str) -> Event {
    Event {
        kind: EventKind::Post,
        id: id.into(),
        author: author.into(),
        community: community.into(),
        timestamp: t,
        thread_id: None,
        parent_id: None,
        body: body.into(),
    }
}

pub fn comment(
    id: &str,
    author: &str,
    community: &str,
    t: i64,
    thread: &str,
    parent: &str,
) -> Event {
    reply(id, author, community, t, thread, parent, "")
}

pub fn reply(
    id: &str,
    author: &str,
    community: &str,
    t: i64,
    thread: &str,
    parent: &str,
    body: &str,
) -> Event {
    Event {
        kind: EventKind::Comment,
        id: id.into(),
        author: author.into(),
        community: community.into(),
        timestamp: t,
        thread_id: Some(thread.into()),
        parent_id: Some(parent.into()),
        body: body.into(),
    }
}
