//! Checklist memory: an ordered list of sub-goals, each pending or completed
//! with a supporting result.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TdmError {
    #[error("initial plan has no sub-goals")]
    EmptyPlan,
    #[error("cannot parse rendered list: {0}")]
    Render(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TodoStatus {
    Pending,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TodoItem {
    pub content: String,
    pub status: TodoStatus,
    pub result: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TodoList {
    pub items: Vec<TodoItem>,
    pub revision: u64,
}

/// One edit. Indices are 1-based positions in the list as it was before the
/// batch containing the op.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum TodoUpdateOp {
    Update {
        index: usize,
        status: TodoStatus,
        #[serde(default)]
        result: String,
    },
    Rewrite {
        index: usize,
        content: String,
    },
    Add {
        content: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        index: Option<usize>,
    },
    Remove {
        index: usize,
    },
}

pub fn init_list<S: AsRef<str>>(subgoals: &[S]) -> Result<TodoList, TdmError> {
    let items: Vec<TodoItem> = subgoals
        .iter()
        .map(|s| s.as_ref().trim())
        .filter(|s| !s.is_empty())
        .map(|s| TodoItem {
            content: s.to_string(),
            status: TodoStatus::Pending,
            result: String::new(),
        })
        .collect();
    if items.is_empty() {
        return Err(TdmError::EmptyPlan);
    }
    Ok(TodoList { items, revision: 0 })
}

/// Applies a batch of ops in order against a working copy. Never fails:
/// rejected ops leave the list untouched and produce a warning. The revision
/// advances by one per batch, even an empty one.
pub fn apply(list: &TodoList, ops: &[TodoUpdateOp]) -> (TodoList, Vec<String>) {
    let n = list.items.len();
    // (pre-batch position, slot, item). Pre-batch item p sits in slot 2p;
    // additions before item j go to slot 2j - 1 and appends to slot 2n + 1.
    // Items are kept sorted by slot, additions after earlier ones in the same slot.
    let mut work: Vec<(Option<usize>, usize, TodoItem)> =
        list.items.iter().cloned().enumerate().map(|(i, it)| (Some(i + 1), 2 * (i + 1), it)).collect();
    let mut warnings = vec![];
    let locate = |work: &Vec<(Option<usize>, usize, TodoItem)>, index: usize| work.iter().position(|(p, _, _)| *p == Some(index));
    for (k, op) in ops.iter().enumerate() {
        let tag = k + 1;
        match op {
            TodoUpdateOp::Update { index, status, result } => {
                if *index == 0 || *index > n {
                    warnings.push(format!("op {tag}: update index {index} out of range 1..={n}"));
                    continue;
                }
                let Some(pos) = locate(&work, *index) else {
                    warnings.push(format!("op {tag}: item {index} was removed earlier in this batch"));
                    continue;
                };
                if *status == TodoStatus::Completed && result.trim().is_empty() {
                    warnings.push(format!("op {tag}: completion of item {index} without a result rolled back"));
                    continue;
                }
                let item = &mut work[pos].2;
                item.status = *status;
                item.result = result.clone();
            }
            TodoUpdateOp::Rewrite { index, content } => {
                if *index == 0 || *index > n {
                    warnings.push(format!("op {tag}: rewrite index {index} out of range 1..={n}"));
                    continue;
                }
                let Some(pos) = locate(&work, *index) else {
                    warnings.push(format!("op {tag}: item {index} was removed earlier in this batch"));
                    continue;
                };
                if content.trim().is_empty() {
                    warnings.push(format!("op {tag}: rewrite of item {index} with empty content"));
                    continue;
                }
                if work[pos].2.status == TodoStatus::Completed {
                    warnings.push(format!("op {tag}: item {index} is completed and cannot be rewritten"));
                    continue;
                }
                work[pos].2.content = content.clone();
            }
            TodoUpdateOp::Add { content, index } => {
                if content.trim().is_empty() {
                    warnings.push(format!("op {tag}: add with empty content"));
                    continue;
                }
                let item = TodoItem {
                    content: content.clone(),
                    status: TodoStatus::Pending,
                    result: String::new(),
                };
                let slot = match index {
                    None => 2 * n + 1,
                    Some(j) if *j >= 1 && *j <= n + 1 => 2 * j - 1,
                    Some(j) => {
                        warnings.push(format!("op {tag}: add index {j} out of range 1..={}", n + 1));
                        continue;
                    }
                };
                let pos = work.iter().position(|(_, s, _)| *s > slot).unwrap_or(work.len());
                work.insert(pos, (None, slot, item));
            }
            TodoUpdateOp::Remove { index } => {
                if *index == 0 || *index > n {
                    warnings.push(format!("op {tag}: remove index {index} out of range 1..={n}"));
                    continue;
                }
                let Some(pos) = locate(&work, *index) else {
                    warnings.push(format!("op {tag}: item {index} was already removed"));
                    continue;
                };
                if work[pos].2.status == TodoStatus::Completed {
                    log::warn!("removing completed checklist item {index}: {:?}", work[pos].2.content);
                }
                work.remove(pos);
            }
        }
    }
    (
        TodoList {
            items: work.into_iter().map(|(_, _, it)| it).collect(),
            revision: list.revision + 1,
        },
        warnings,
    )
}

const HEADER: &str = "TODO";

/// One header line plus one line per item; strings are JSON-quoted so the
/// rendering is unambiguous.
pub fn render_text(list: &TodoList) -> String {
    let mut out = format!("{HEADER} (revision {}, {} items)\n", list.revision, list.items.len());
    for (i, it) in list.items.iter().enumerate() {
        let glyph = match it.status {
            TodoStatus::Pending => "[ ]",
            TodoStatus::Completed => "[x]",
        };
        out.push_str(&format!(
            "{}. {glyph} {} -> {}\n",
            i + 1,
            serde_json::to_string(&it.content).expect("string serializes"),
            serde_json::to_string(&it.result).expect("string serializes"),
        ));
    }
    out
}

/// Inverse of [`render_text`].
pub fn parse_rendered(text: &str) -> Result<TodoList, TdmError> {
    let bad = |m: &str| TdmError::Render(m.to_string());
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("missing header"))?;
    let inner = header
        .strip_prefix(&format!("{HEADER} (revision "))
        .and_then(|s| s.strip_suffix(" items)"))
        .ok_or_else(|| bad("malformed header"))?;
    let (rev, count) = inner.split_once(", ").ok_or_else(|| bad("malformed header"))?;
    let revision: u64 = rev.parse().map_err(|_| bad("bad revision"))?;
    let count: usize = count.parse().map_err(|_| bad("bad count"))?;
    let mut items = vec![];
    for (k, line) in lines.enumerate() {
        let prefix = format!("{}. ", k + 1);
        let rest = line.strip_prefix(&prefix).ok_or_else(|| bad("bad item number"))?;
        let (status, rest) = if let Some(r) = rest.strip_prefix("[ ] ") {
            (TodoStatus::Pending, r)
        } else if let Some(r) = rest.strip_prefix("[x] ") {
            (TodoStatus::Completed, r)
        } else {
            return Err(bad("bad status glyph"));
        };
        let mut stream = serde_json::Deserializer::from_str(rest).into_iter::<String>();
        let content = stream
            .next()
            .ok_or_else(|| bad("missing content"))?
            .map_err(|e| TdmError::Render(e.to_string()))?;
        let consumed = stream.byte_offset();
        let result_part = rest[consumed..].strip_prefix(" -> ").ok_or_else(|| bad("missing separator"))?;
        let result: String = serde_json::from_str(result_part).map_err(|e| TdmError::Render(e.to_string()))?;
        items.push(TodoItem { content, status, result });
    }
    if items.len() != count {
        return Err(bad("item count does not match header"));
    }
    Ok(TodoList { items, revision })
}

impl TodoList {
    pub fn completed_count(&self) -> usize {
        self.items.iter().filter(|i| i.status == TodoStatus::Completed).count()
    }

    pub fn first_pending(&self) -> Option<usize> {
        self.items.iter().position(|i| i.status == TodoStatus::Pending)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upd(index: usize, result: &str) -> TodoUpdateOp {
        TodoUpdateOp::Update {
            index,
            status: TodoStatus::Completed,
            result: result.into(),
        }
    }

    #[test]
    fn init_examples() {
        let l = init_list(&["reach hallway", "find sofa"]).unwrap();
        assert_eq!(l.items.len(), 2);
        assert_eq!(l.completed_count(), 0);
        assert_eq!(l.revision, 0);
        assert_eq!(init_list::<&str>(&[]), Err(TdmError::EmptyPlan));
    }

    #[test]
    fn update_with_and_without_result() {
        let l = init_list(&["find sofa", "stop"]).unwrap();
        let (a, w) = apply(&l, &[upd(1, "saw the sofa at the window")]);
        assert!(w.is_empty());
        assert_eq!(a.items[0].status, TodoStatus::Completed);
        assert_eq!(a.items[0].result, "saw the sofa at the window");
        let (b, w) = apply(&l, &[upd(1, "   ")]);
        assert_eq!(w.len(), 1);
        assert_eq!(b.items[0].status, TodoStatus::Pending);
    }

    #[test]
    fn empty_batch_bumps_revision_only() {
        let l = init_list(&["a"]).unwrap();
        let (a, w) = apply(&l, &[]);
        assert!(w.is_empty());
        assert_eq!(a.items, l.items);
        assert_eq!(a.revision, 1);
    }

    #[test]
    fn indices_refer_to_pre_batch_list() {
        let l = init_list(&["a", "b", "c"]).unwrap();
        let ops = [
            TodoUpdateOp::Remove { index: 1 },
            upd(3, "seen c"),
            TodoUpdateOp::Add {
                content: "x".into(),
                index: Some(2),
            },
        ];
        let (a, w) = apply(&l, &ops);
        assert!(w.is_empty(), "{w:?}");
        let contents: Vec<&str> = a.items.iter().map(|i| i.content.as_str()).collect();
        assert_eq!(contents, ["x", "b", "c"]);
        assert_eq!(a.items[2].status, TodoStatus::Completed);
    }

    #[test]
    fn out_of_range_and_rewrite_rules() {
        let l = init_list(&["a", "b"]).unwrap();
        let (done, _) = apply(&l, &[upd(2, "ok")]);
        let ops = [
            TodoUpdateOp::Remove { index: 7 },
            TodoUpdateOp::Rewrite {
                index: 2,
                content: "bb".into(),
            },
            TodoUpdateOp::Rewrite {
                index: 1,
                content: "aa".into(),
            },
        ];
        let (a, w) = apply(&done, &ops);
        assert_eq!(w.len(), 2);
        assert_eq!(a.items[0].content, "aa");
        assert_eq!(a.items[1].content, "b");
    }

    #[test]
    fn re_pending_is_accepted() {
        let l = init_list(&["a"]).unwrap();
        let (done, _) = apply(&l, &[upd(1, "ok")]);
        let (back, w) = apply(
            &done,
            &[TodoUpdateOp::Update {
                index: 1,
                status: TodoStatus::Pending,
                result: String::new(),
            }],
        );
        assert!(w.is_empty());
        assert_eq!(back.items[0].status, TodoStatus::Pending);
    }

    #[test]
    fn removing_completed_item_is_not_a_rejection() {
        let l = init_list(&["a", "b"]).unwrap();
        let (done, _) = apply(&l, &[upd(1, "ok")]);
        let (a, w) = apply(&done, &[TodoUpdateOp::Remove { index: 1 }]);
        assert!(w.is_empty());
        assert_eq!(a.items.len(), 1);
    }

    #[test]
    fn render_round_trip_and_header_only() {
        let l = init_list(&["reach \"hall\"", "find sofa -> now"]).unwrap();
        let (l, _) = apply(&l, &[upd(2, "sofa, left of the -> window")]);
        let text = render_text(&l);
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("sofa, left of the -> window"));
        assert_eq!(parse_rendered(&text).unwrap(), l);
        let (empty, _) = apply(&l, &[TodoUpdateOp::Remove { index: 1 }, TodoUpdateOp::Remove { index: 2 }]);
        assert_eq!(render_text(&empty), "TODO (revision 2, 0 items)\n");
    }

    #[test]
    fn op_wire_format() {
        let op: TodoUpdateOp = serde_json::from_str(r#"{"op":"add","content":"go"}"#).unwrap();
        assert_eq!(
            op,
            TodoUpdateOp::Add {
                content: "go".into(),
                index: None
            }
        );
        let op: TodoUpdateOp =
            serde_json::from_str(r#"{"op":"update","index":2,"status":"completed","result":"r"}"#).unwrap();
        assert_eq!(op, upd(2, "r"));
    }
}
