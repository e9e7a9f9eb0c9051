//! Dialogues and their projection into input/output text pairs for the
//! four training settings.

use serde::{Deserialize, Serialize};

use crate::data::api::ApiCall;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "USER")]
    User,
    #[serde(rename = "SYSTEM")]
    System,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub speaker: Speaker,
    pub utterance: String,
    /// User intent plus current dialogue state, annotated on user turns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_call: Option<ApiCall>,
    /// System speech-act returned by the api, annotated on system turns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_out: Option<ApiCall>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dialogue {
    pub corpus: String,
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub turns: Vec<DialogueTurn>,
}

impl Dialogue {
    /// Task identity is (corpus, domain) so same-named domains from
    /// different corpora never merge.
    pub fn task_label(&self) -> String {
        format!("{}.{}", self.corpus, self.domain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "INTENT")]
    Intent,
    #[serde(rename = "DST")]
    Dst,
    #[serde(rename = "NLG")]
    Nlg,
    #[serde(rename = "E2E")]
    E2e,
}

impl Setting {
    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::Intent => "INTENT",
            Setting::Dst => "DST",
            Setting::Nlg => "NLG",
            Setting::E2e => "E2E",
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "INTENT" => Ok(Setting::Intent),
            "DST" => Ok(Setting::Dst),
            "NLG" => Ok(Setting::Nlg),
            "E2E" => Ok(Setting::E2e),
            other => Err(Error::Config(format!("unknown setting `{other}`"))),
        }
    }
}

/// One input/output pair. The input is kept as ordered segments (one per
/// history turn plus a mandatory trailer) so history truncation can drop
/// oldest turns first without splitting an utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x_segments: Vec<String>,
    pub y: String,
    pub task_label: String,
    pub setting: Setting,
    /// Gold annotation carried along for evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_api: Option<ApiCall>,
}

impl Example {
    pub fn input_text(&self) -> String {
        self.x_segments.join(" ")
    }
}

fn history_segments(turns: &[DialogueTurn]) -> Vec<String> {
    turns
        .iter()
        .map(|t| {
            let tag = match t.speaker {
                Speaker::User => "USER:",
                Speaker::System => "SYSTEM:",
            };
            format!("{tag} {}", t.utterance)
        })
        .collect()
}

fn check_dialogue(turns: &[DialogueTurn]) -> Result<()> {
    if turns.is_empty() {
        return Err(Error::DialogueFormat("dialogue has no turns".into()));
    }
    for t in turns {
        if t.utterance.trim().is_empty() {
            return Err(Error::DialogueFormat("empty utterance".into()));
        }
    }
    for pair in turns.windows(2) {
        if pair[0].speaker == pair[1].speaker {
            return Err(Error::DialogueFormat(
                "speakers must alternate".into(),
            ));
        }
    }
    Ok(())
}

/// Projects one dialogue into the examples of the given setting.
///
/// INTENT/DST pair the history up to each annotated user turn (plus the
/// `API:` trigger) with the intent or the full serialized api-call. NLG
/// pairs each system speech-act with the system utterance. E2E emits
/// both api-call pairs and response pairs; when the speech-act is empty
/// the response is generated straight from the history.
pub fn build_examples(dialogue: &Dialogue, setting: Setting) -> Result<Vec<Example>> {
    check_dialogue(&dialogue.turns)?;
    let label = dialogue.task_label();
    let mut out = Vec::new();
    for (i, turn) in dialogue.turns.iter().enumerate() {
        match turn.speaker {
            Speaker::User => {
                let Some(api) = &turn.api_call else { continue };
                if !matches!(setting, Setting::Intent | Setting::Dst | Setting::E2e) {
                    continue;
                }
                let mut segs = history_segments(&dialogue.turns[..=i]);
                segs.push("API:".to_string());
                let y = match setting {
                    Setting::Intent => api.intent.clone(),
                    _ => api.serialize(),
                };
                out.push(Example {
                    x_segments: segs,
                    y,
                    task_label: label.clone(),
                    setting,
                    gold_api: Some(api.clone()),
                });
            }
            Speaker::System => match setting {
                Setting::Nlg => {
                    let Some(api_out) = &turn.api_out else { continue };
                    out.push(Example {
                        x_segments: vec![format!("OUT: {}", api_out.serialize())],
                        y: turn.utterance.clone(),
                        task_label: label.clone(),
                        setting,
                        gold_api: Some(api_out.clone()),
                    });
                }
                Setting::E2e => {
                    let mut segs = history_segments(&dialogue.turns[..i]);
                    if let Some(api_out) = &turn.api_out {
                        segs.push(format!("OUT: {}", api_out.serialize()));
                    }
                    if segs.is_empty() {
                        continue;
                    }
                    out.push(Example {
                        x_segments: segs,
                        y: turn.utterance.clone(),
                        task_label: label.clone(),
                        setting,
                        gold_api: turn.api_out.clone(),
                    });
                }
                _ => {}
            },
        }
    }
    Ok(out)
}
