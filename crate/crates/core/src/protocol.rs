//! Scoring protocol: the fixed system prompt, the chat-completions request
//! body, and strict validation of the model's JSON reply.

use crate::ensemble::{RISK_RANGE, TECH_RANGE};
use crate::taxonomy::Dwa;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// System message sent with every DWA, byte for byte.
pub const SYSTEM_PROMPT: &str = include_str!("system_prompt.txt");

/// SHA-256 of [`SYSTEM_PROMPT`], hex encoded.
pub const SYSTEM_PROMPT_SHA256: &str = "17f76f65b42efed7d9909e93bb3eb8f491559956afb78e2dd16994f32e0254fa";

const REQUIRED_KEYS: [&str; 3] = ["tech_level", "risk_score", "reasoning"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Body of `POST {base_url}/chat/completions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

/// System + user messages for one DWA. The user message is the DWA title.
pub fn build_prompt(dwa: &Dwa) -> Vec<ChatMessage> {
    vec![
        ChatMessage { role: "system".into(), content: SYSTEM_PROMPT.into() },
        ChatMessage { role: "user".into(), content: dwa.title.clone() },
    ]
}

pub fn chat_request(model: &str, temperature: f64, dwa: &Dwa) -> ChatRequest {
    ChatRequest { model: model.to_string(), messages: build_prompt(dwa), temperature }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedScore {
    pub tech_level: u8,
    pub risk_score: u8,
    pub reasoning: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("response is not valid JSON: {0}")]
    NotJson(String),
    #[error("response JSON is not an object")]
    NotObject,
    #[error("response is missing key {0:?}")]
    MissingKey(&'static str),
    #[error("key {0:?} has the wrong type")]
    WrongType(&'static str),
    #[error("{key} = {value} is out of range")]
    OutOfRange { key: &'static str, value: i64 },
    #[error("completion envelope: {0}")]
    Envelope(String),
}

/// Strips one surrounding Markdown code fence, if the whole body is fenced.
fn unfence(body: &str) -> Option<&str> {
    let inner = body.strip_prefix("```")?.strip_suffix("```")?;
    // Drop an optional info string such as `json` on the opening line.
    let (first, rest) = inner.split_once('\n')?;
    if first.trim().chars().all(|c| c.is_ascii_alphanumeric()) && !rest.contains("```") {
        Some(rest)
    } else {
        None
    }
}

/// Validates a model reply: exactly the keys `tech_level`, `risk_score`,
/// `reasoning`, with integers in range. A single fenced code block is
/// unwrapped with a warning; extra keys are tolerated with a warning.
pub fn parse_response(body: &str) -> Result<ParsedScore, ProtocolError> {
    let mut warnings = Vec::new();
    let trimmed = body.trim();
    let payload = match unfence(trimmed) {
        Some(inner) => {
            warnings.push("response was wrapped in a Markdown code fence; unwrapped".to_string());
            inner
        }
        None => trimmed,
    };
    let value: serde_json::Value = serde_json::from_str(payload).map_err(|e| ProtocolError::NotJson(e.to_string()))?;
    let obj = value.as_object().ok_or(ProtocolError::NotObject)?;
    for key in REQUIRED_KEYS {
        if !obj.contains_key(key) {
            return Err(ProtocolError::MissingKey(key));
        }
    }
    let extra: Vec<&String> = obj.keys().filter(|k| !REQUIRED_KEYS.contains(&k.as_str())).collect();
    if !extra.is_empty() {
        warnings.push(format!("ignored unexpected keys {extra:?}"));
    }
    let int = |key: &'static str, range: &std::ops::RangeInclusive<u8>| -> Result<u8, ProtocolError> {
        let v = obj[key].as_i64().ok_or(ProtocolError::WrongType(key))?;
        u8::try_from(v).ok().filter(|x| range.contains(x)).ok_or(ProtocolError::OutOfRange { key, value: v })
    };
    let tech_level = int("tech_level", &TECH_RANGE)?;
    let risk_score = int("risk_score", &RISK_RANGE)?;
    let reasoning = obj["reasoning"].as_str().ok_or(ProtocolError::WrongType("reasoning"))?.to_string();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ParsedScore { tech_level, risk_score, reasoning, warnings })
}

/// The reply object a compliant model would send for these values.
pub fn serialize_response(tech_level: u8, risk_score: u8, reasoning: &str) -> String {
    serde_json::json!({ "tech_level": tech_level, "risk_score": risk_score, "reasoning": reasoning }).to_string()
}

/// Pulls `choices[0].message.content` out of a chat-completions response body.
pub fn extract_content(response_body: &str) -> Result<String, ProtocolError> {
    let value: serde_json::Value =
        serde_json::from_str(response_body).map_err(|e| ProtocolError::Envelope(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| ProtocolError::Envelope("missing choices[0].message.content".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dwa(title: &str) -> Dwa {
        Dwa { dwa_id: "D1".into(), title: title.into() }
    }

    #[test]
    fn prompt_hash_is_frozen() {
        assert_eq!(sha256_hex(SYSTEM_PROMPT.as_bytes()), SYSTEM_PROMPT_SHA256);
        assert!(SYSTEM_PROMPT.starts_with("You are a top-tier assessment expert"));
        assert!(SYSTEM_PROMPT.contains("You MUST ONLY return a valid JSON object."));
    }

    #[test]
    fn payload_is_deterministic() {
        let a = chat_request("m", 0.0, &dwa("Analyze data"));
        let b = chat_request("m", 0.0, &dwa("Analyze data"));
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.messages[0].role, "system");
        assert_eq!(a.messages[1].content, "Analyze data");
        let v = serde_json::to_value(&a).unwrap();
        assert_eq!(v["model"], "m");
        assert_eq!(v["temperature"], 0.0);
    }

    #[test]
    fn parses_example_reply() {
        let p = parse_response(r#"{"tech_level": 2, "risk_score": 3, "reasoning": "A brief explanation of why."}"#)
            .unwrap();
        assert_eq!((p.tech_level, p.risk_score), (2, 3));
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn rejects_bad_replies() {
        assert_eq!(
            parse_response(r#"{"tech_level": 5, "risk_score": 3, "reasoning": "x"}"#),
            Err(ProtocolError::OutOfRange { key: "tech_level", value: 5 })
        );
        assert_eq!(
            parse_response(r#"{"tech_level": 1, "risk_score": 0, "reasoning": "x"}"#),
            Err(ProtocolError::OutOfRange { key: "risk_score", value: 0 })
        );
        assert_eq!(
            parse_response(r#"{"tech_level": 1, "reasoning": "x"}"#),
            Err(ProtocolError::MissingKey("risk_score"))
        );
        assert_eq!(
            parse_response(r#"{"tech_level": "2", "risk_score": 3, "reasoning": "x"}"#),
            Err(ProtocolError::WrongType("tech_level"))
        );
        assert_eq!(
            parse_response(r#"{"tech_level": 2.5, "risk_score": 3, "reasoning": "x"}"#),
            Err(ProtocolError::WrongType("tech_level"))
        );
        assert_eq!(parse_response("[1, 2]"), Err(ProtocolError::NotObject));
        assert!(matches!(parse_response("Sure! Here is the score"), Err(ProtocolError::NotJson(_))));
    }

    #[test]
    fn fenced_reply_is_unwrapped_with_warning() {
        let body = "```json\n{\"tech_level\": 2, \"risk_score\": 3, \"reasoning\": \"ok\"}\n```";
        let p = parse_response(body).unwrap();
        assert_eq!((p.tech_level, p.risk_score), (2, 3));
        assert_eq!(p.warnings.len(), 1);
        let two = "```\n{}\n```\n```\n{}\n```";
        assert!(parse_response(two).is_err());
    }

    #[test]
    fn extra_keys_warn() {
        let p = parse_response(r#"{"tech_level": 0, "risk_score": 5, "reasoning": "", "confidence": 0.9}"#).unwrap();
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn envelope_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#;
        assert_eq!(extract_content(body).unwrap(), "hi");
        assert!(extract_content(r#"{"choices":[]}"#).is_err());
    }
}
