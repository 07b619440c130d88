use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Sent,
    Received,
    Dropped,
    Cloned,
    RuleInstalled,
    Silenced,
    Reactivated,
    MigrationNotified,
    /// Any other controller effect, kept for debugging.
    Note,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Position in the trace; strictly increasing.
    pub step: u64,
    /// Logical clock when the event happened.
    pub tick: u64,
    pub node: String,
    pub action: Action,
    pub detail: Value,
}

impl TraceEvent {
    pub fn field(&self, key: &str) -> Option<&Value> {
        self.detail.get(key)
    }

    pub fn str_field(&self, key: &str) -> Option<&str> {
        self.detail.get(key)?.as_str()
    }

    pub fn u64_field(&self, key: &str) -> Option<u64> {
        self.detail.get(key)?.as_u64()
    }
}

/// Query helpers over a slice of trace events.
pub trait TraceExt {
    fn with_action(&self, action: Action) -> Vec<&TraceEvent>;
    fn count(&self, action: Action) -> usize;
    fn first_of(&self, action: Action) -> Option<&TraceEvent>;
    fn at_node(&self, node: &str, action: Action) -> Vec<&TraceEvent>;
}

impl TraceExt for [TraceEvent] {
    fn with_action(&self, action: Action) -> Vec<&TraceEvent> {
        self.iter().filter(|e| e.action == action).collect()
    }

    fn count(&self, action: Action) -> usize {
        self.iter().filter(|e| e.action == action).count()
    }

    fn first_of(&self, action: Action) -> Option<&TraceEvent> {
        self.iter().find(|e| e.action == action)
    }

    fn at_node(&self, node: &str, action: Action) -> Vec<&TraceEvent> {
        self.iter().filter(|e| e.action == action && e.node == node).collect()
    }
}

pub fn write_ldjson<W: Write>(events: &[TraceEvent], mut out: W) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_ldjson<R: BufRead>(input: R) -> io::Result<Vec<TraceEvent>> {
    let mut events = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line)?);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn ldjson_round_trip() {
        let events = vec![
            TraceEvent { step: 0, tick: 0, node: "enb-1".into(), action: Action::Sent, detail: json!({"to": "megw-a"}) },
            TraceEvent { step: 1, tick: 1, node: "megw-a".into(), action: Action::Cloned, detail: json!({}) },
        ];
        let mut buf = Vec::new();
        write_ldjson(&events, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with(r#"{"step":0,"tick":0,"node":"enb-1","action":"Sent""#));
        assert_eq!(read_ldjson(&buf[..]).unwrap(), events);
        assert_eq!(events.count(Action::Cloned), 1);
    }
}
