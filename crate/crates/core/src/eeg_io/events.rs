//! Event sidecar CSV: header `session_id,sample_index,kind`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    ButtonPress,
    CountingStart,
    QuestionStart,
    QuestionEnd,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::ButtonPress => "button_press",
            EventKind::CountingStart => "counting_start",
            EventKind::QuestionStart => "question_start",
            EventKind::QuestionEnd => "question_end",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "button_press" => EventKind::ButtonPress,
            "counting_start" => EventKind::CountingStart,
            "question_start" => EventKind::QuestionStart,
            "question_end" => EventKind::QuestionEnd,
            other => return Err(format!("unknown event kind `{other}`")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Event {
    pub session_id: u16,
    pub sample_index: usize,
    pub kind: EventKind,
}

const HEADER: [&str; 3] = ["session_id", "sample_index", "kind"];

/// Parses and validates an events file. Rows are returned sorted by
/// `(session_id, sample_index)`; errors carry the 1-based line number.
pub fn parse_events_csv(text: &str) -> Result<Vec<Event>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Events { row: 1, detail: e.to_string() })?;
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Events {
            row: 1,
            detail: format!("expected header `{}`", HEADER.join(",")),
        });
    }
    let mut events = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Events {
            row: e.position().map_or(0, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let bad = |detail: String| Error::Events { row, detail };
        let session_id = record[0]
            .parse::<u16>()
            .map_err(|_| bad(format!("invalid session_id `{}`", &record[0])))?;
        let index = record[1]
            .parse::<i64>()
            .map_err(|_| bad(format!("invalid sample_index `{}`", &record[1])))?;
        if index < 0 {
            return Err(bad(format!("negative sample_index {index}")));
        }
        let kind = record[2].parse::<EventKind>().map_err(bad)?;
        events.push(Event {
            session_id,
            sample_index: index as usize,
            kind,
        });
    }
    events.sort_by_key(|e| (e.session_id, e.sample_index));
    Ok(events)
}

pub fn read_events_csv(path: impl AsRef<Path>) -> Result<Vec<Event>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_events_csv(&text)
}

pub fn write_events_csv(events: &[Event], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = HEADER.join(",");
    text.push('\n');
    for e in events {
        text.push_str(&format!("{},{},{}\n", e.session_id, e.sample_index, e.kind));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Events for one session, with indices checked against the recording length.
pub fn session_events(events: &[Event], session_id: u16, n_samples: usize) -> Result<Vec<Event>> {
    let out: Vec<Event> = events.iter().filter(|e| e.session_id == session_id).copied().collect();
    if let Some(e) = out.iter().find(|e| e.sample_index >= n_samples) {
        return Err(Error::InvalidArgument(format!(
            "{} event at sample {} lies beyond the {n_samples}-sample recording of session {session_id}",
            e.kind, e.sample_index
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_press() {
        let ev = parse_events_csv("session_id,sample_index,kind\n1,20480,button_press\n").unwrap();
        assert_eq!(
            ev,
            vec![Event {
                session_id: 1,
                sample_index: 20480,
                kind: EventKind::ButtonPress
            }]
        );
    }

    #[test]
    fn unknown_kind_names_row() {
        let text = "session_id,sample_index,kind\n1,10,counting_start\n1,20,coffee_break\n";
        match parse_events_csv(text) {
            Err(Error::Events { row, detail }) => {
                assert_eq!(row, 3);
                assert!(detail.contains("coffee_break"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_index_rejected() {
        let text = "session_id,sample_index,kind\n1,-5,button_press\n";
        assert!(matches!(parse_events_csv(text), Err(Error::Events { row: 2, .. })));
    }

    #[test]
    fn out_of_order_rows_are_sorted() {
        let text = "session_id,sample_index,kind\n1,20480,button_press\n1,18000,button_press\n";
        let ev = parse_events_csv(text).unwrap();
        assert_eq!(ev.iter().map(|e| e.sample_index).collect::<Vec<_>>(), vec![18000, 20480]);
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(parse_events_csv("a,b,c\n1,2,button_press\n").is_err());
    }

    #[test]
    fn session_filter_checks_bounds() {
        let text = "session_id,sample_index,kind\n1,50,button_press\n2,500,button_press\n";
        let ev = parse_events_csv(text).unwrap();
        assert_eq!(session_events(&ev, 1, 100).unwrap().len(), 1);
        assert!(session_events(&ev, 2, 100).is_err());
    }
}
