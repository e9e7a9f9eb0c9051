//! Api-call serialization and its tolerant inverse.
//!
//! Surface form: `intent ( slot = value , slot = value )` with
//! single-space token separation and slots in lexicographic name order.
//! The parser accepts arbitrary model output and reports a structured
//! error instead of crashing; metrics treat parse failures as wrong
//! predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ApiCall {
    pub intent: String,
    /// Kept sorted by slot name; names are unique.
    pub slots: Vec<Slot>,
}

impl ApiCall {
    /// Sorts slots by name; on duplicate names the last occurrence wins.
    pub fn new(intent: impl Into<String>, slots: Vec<(String, String)>) -> Self {
        let mut out: Vec<Slot> = Vec::new();
        for (name, value) in slots {
            if let Some(existing) = out.iter_mut().find(|s| s.name == name) {
                existing.value = value;
            } else {
                out.push(Slot { name, value });
            }
        }
        out.sort_by(|a, b| a.name.cmp(&b.name));
        ApiCall {
            intent: intent.into(),
            slots: out,
        }
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.intent);
        out.push_str(" (");
        for (i, s) in self.slots.iter().enumerate() {
            if i > 0 {
                out.push_str(" ,");
            }
            out.push(' ');
            out.push_str(&s.name);
            out.push_str(" = ");
            out.push_str(&s.value);
        }
        out.push_str(" )");
        out
    }

    pub fn parse(text: &str) -> Result<ApiCall> {
        let toks: Vec<&str> = text.split_whitespace().collect();
        let fail = |msg: &str| Error::ApiParse(format!("{msg}: `{text}`"));
        if toks.len() < 3 {
            return Err(fail("too short"));
        }
        let intent = toks[0];
        if intent == "(" || intent == ")" || intent == "=" || intent == "," {
            return Err(fail("missing intent"));
        }
        if toks[1] != "(" {
            return Err(fail("expected `(` after intent"));
        }
        let mut slots: Vec<(String, String)> = Vec::new();
        let mut i = 2;
        loop {
            if i >= toks.len() {
                return Err(fail("unterminated call"));
            }
            if toks[i] == ")" {
                break;
            }
            let name = toks[i];
            if name == "(" || name == "=" || name == "," {
                return Err(fail("expected slot name"));
            }
            i += 1;
            if i >= toks.len() || toks[i] != "=" {
                return Err(fail("expected `=` after slot name"));
            }
            i += 1;
            // value runs to the next `,` or `)`
            let mut value_toks: Vec<&str> = Vec::new();
            while i < toks.len() && toks[i] != "," && toks[i] != ")" {
                value_toks.push(toks[i]);
                i += 1;
            }
            if value_toks.is_empty() {
                return Err(fail("empty slot value"));
            }
            slots.push((name.to_string(), value_toks.join(" ")));
            if i < toks.len() && toks[i] == "," {
                i += 1;
            }
        }
        Ok(ApiCall::new(intent, slots))
    }
}
