use std::collections::{BTreeMap, BTreeSet};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    CandidateSource, Detection, FusedResponse, OracleContext, OracleError, ReasoningOracle, Stage, StageOutcome,
    StageVerdictMap,
};
use crate::image::{Image, PixelRect};
use crate::perception::SomRepresentation;

/// Environment variable holding the bearer token. Never read from flags or
/// config files.
pub const API_KEY_ENV: &str = "AEROVLN_API_KEY";
pub const ENDPOINT_ENV: &str = "AEROVLN_ENDPOINT";
pub const MODEL_ENV: &str = "AEROVLN_MODEL";
pub const TEMPERATURE_ENV: &str = "AEROVLN_TEMPERATURE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub retry_backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            temperature: 0.6,
            timeout_secs: 60.0,
            max_retries: 2,
            retry_backoff_ms: 250,
        }
    }
}

impl RemoteConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(OracleError::Config(format!(
                "endpoint must be an http(s) URL, got `{}`",
                self.endpoint
            )));
        }
        if self.model.trim().is_empty() {
            return Err(OracleError::Config("model must not be empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(OracleError::Config(format!(
                "temperature must lie in [0, 2], got {}",
                self.temperature
            )));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(OracleError::Config("timeout_secs must be positive".into()));
        }
        Ok(())
    }

    /// Applies `AEROVLN_ENDPOINT`, `AEROVLN_MODEL` and `AEROVLN_TEMPERATURE`
    /// when set.
    pub fn with_env_overrides(mut self) -> Result<Self, OracleError> {
        if let Ok(v) = std::env::var(ENDPOINT_ENV) {
            self.endpoint = v;
        }
        if let Ok(v) = std::env::var(MODEL_ENV) {
            self.model = v;
        }
        if let Ok(v) = std::env::var(TEMPERATURE_ENV) {
            self.temperature = v
                .parse()
                .map_err(|_| OracleError::Config(format!("{TEMPERATURE_ENV} is not a number: `{v}`")))?;
        }
        Ok(self)
    }
}

/// Returns the JSON value inside the first fenced code block of `text`.
/// A `json` info string is optional; anything else is a parse failure.
pub fn extract_fenced_json(text: &str) -> Result<Value, OracleError> {
    let start = text
        .find("```")
        .ok_or_else(|| OracleError::Parse("no fenced block in reply".into()))?;
    let rest = &text[start + 3..];
    let body_start = rest.find('\n').map_or(rest.len(), |i| i + 1);
    let info = rest[..body_start].trim();
    if !(info.is_empty() || info.eq_ignore_ascii_case("json")) {
        return Err(OracleError::Parse(format!("unexpected fence language `{info}`")));
    }
    let body = &rest[body_start..];
    let end = body
        .find("```")
        .ok_or_else(|| OracleError::Parse("unterminated fenced block".into()))?;
    serde_json::from_str(&body[..end]).map_err(|e| OracleError::Parse(format!("fenced block: {e}")))
}

fn parse_outcome(v: &Value) -> Result<StageOutcome, OracleError> {
    match v.as_str() {
        Some("pass") => Ok(StageOutcome::Pass),
        Some("fail") => Ok(StageOutcome::Fail),
        Some("pending") => Ok(StageOutcome::Pending),
        _ => Err(OracleError::Parse(format!("invalid verdict {v}"))),
    }
}

fn optional_text(v: &Value, key: &str) -> Option<String> {
    v.get(key).and_then(Value::as_str).map(str::to_string)
}

/// Parses a `{"verdicts": {...}, "rationale", "guidance"}` reply and
/// restricts it to `ids`.
pub(crate) fn parse_verdicts(content: &str, ids: &BTreeSet<u32>) -> Result<StageVerdictMap, OracleError> {
    let v = extract_fenced_json(content)?;
    let raw = v
        .get("verdicts")
        .and_then(Value::as_object)
        .ok_or_else(|| OracleError::Parse("missing `verdicts` object".into()))?;
    let mut verdicts = BTreeMap::new();
    for (k, outcome) in raw {
        let id: u32 = k
            .trim()
            .parse()
            .map_err(|_| OracleError::Parse(format!("verdict key `{k}` is not a mark id")))?;
        verdicts.insert(id, parse_outcome(outcome)?);
    }
    Ok(StageVerdictMap {
        verdicts,
        rationale: optional_text(&v, "rationale").unwrap_or_default(),
        guidance: optional_text(&v, "guidance").filter(|g| !g.trim().is_empty()),
    }
    .covering(ids))
}

fn parse_bbox(v: &Value) -> Result<PixelRect, OracleError> {
    let a = v
        .as_array()
        .filter(|a| a.len() == 4)
        .ok_or_else(|| OracleError::Parse(format!("bbox must be [x0, y0, x1, y1], got {v}")))?;
    let n: Vec<f64> = a
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| OracleError::Parse(format!("bbox entry {x} is not a number")))
        })
        .collect::<Result<_, _>>()?;
    Ok(PixelRect {
        x0: n[0].min(n[2]),
        y0: n[1].min(n[3]),
        x1: n[0].max(n[2]),
        y1: n[1].max(n[3]),
    })
}

type ParsedDetections = (Vec<(Detection, Option<StageOutcome>)>, Value);

/// Parses `{"detections": [{"label", "bbox", "verdict"?}]}`.
pub(crate) fn parse_detections(content: &str) -> Result<ParsedDetections, OracleError> {
    let v = extract_fenced_json(content)?;
    let list = v
        .get("detections")
        .and_then(Value::as_array)
        .ok_or_else(|| OracleError::Parse("missing `detections` array".into()))?;
    let mut out = Vec::with_capacity(list.len());
    for d in list {
        let label = optional_text(d, "label").ok_or_else(|| OracleError::Parse("detection without label".into()))?;
        let bbox = parse_bbox(d.get("bbox").unwrap_or(&Value::Null))?;
        let verdict = d.get("verdict").map(parse_outcome).transpose()?;
        out.push((
            Detection {
                label,
                bbox,
                centroid: None,
                source: CandidateSource::Unknown,
            },
            verdict,
        ));
    }
    Ok((out, v))
}

/// Client for chat-completions style endpoints. Calls are blocking and
/// bounded by the configured timeout; transport failures, timeouts, 429 and
/// 5xx replies are retried up to `max_retries` times.
pub struct RemoteOracle {
    config: RemoteConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for RemoteOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteOracle")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl RemoteOracle {
    pub fn new(config: RemoteConfig) -> Result<Self, OracleError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| OracleError::Config(e.to_string()))?;
        Ok(Self {
            config,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            client,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Request body for one chat turn.
    pub fn request_body(&self, text: &str, image: &Image) -> Value {
        let data_url = format!(
            "data:image/x-portable-pixmap;base64,{}",
            STANDARD.encode(image.to_ppm())
        );
        json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {
                    "role": "system",
                    "content": "You inspect nadir aerial images for a drone. Reply with exactly one fenced ```json block in the requested shape."
                },
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": text},
                        {"type": "image_url", "image_url": {"url": data_url}}
                    ]
                }
            ]
        })
    }

    /// Sends one chat turn and returns the first choice's message content.
    pub fn complete(&self, text: &str, image: &Image) -> Result<String, OracleError> {
        let body = self.request_body(text, image);
        let attempts = self.config.max_retries + 1;
        let mut last = OracleError::Transport {
            attempts: 0,
            message: "no attempt made".into(),
        };
        for attempt in 1..=attempts {
            if attempt > 1 {
                let backoff = self.config.retry_backoff_ms.saturating_mul(1 << (attempt - 2).min(16));
                thread::sleep(Duration::from_millis(backoff));
            }
            let mut req = self.client.post(&self.config.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) if e.is_timeout() => {
                    last = OracleError::Timeout { attempts: attempt };
                    continue;
                }
                Err(e) => {
                    last = OracleError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    };
                    continue;
                }
            };
            let status = resp.status();
            if status.is_server_error() || status.as_u16() == 429 {
                last = OracleError::Status {
                    status: status.as_u16(),
                    attempts: attempt,
                };
                continue;
            }
            if !status.is_success() {
                return Err(OracleError::Status {
                    status: status.as_u16(),
                    attempts: attempt,
                });
            }
            let reply: Value = match resp.json() {
                Ok(v) => v,
                Err(e) if e.is_timeout() => {
                    last = OracleError::Timeout { attempts: attempt };
                    continue;
                }
                Err(e) => return Err(OracleError::Parse(format!("reply is not JSON: {e}"))),
            };
            return reply
                .pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| OracleError::Parse("reply has no choices[0].message.content".into()));
        }
        Err(last)
    }
}

fn constraint_text(ctx: &OracleContext<'_>) -> String {
    let c = &ctx.episode.constraints;
    let mut s = format!("Instruction: {}\nTarget: {}", ctx.episode.instruction, c.description());
    for r in &c.relations {
        s.push_str(&format!("\nRelation: target {} {}", r.kind.phrase(), r.reference));
    }
    if let Some(b) = &c.boundary_landmark {
        s.push_str(&format!("\nBoundary: target lies within {b}"));
    }
    s
}

fn marks_text(som: &SomRepresentation) -> String {
    som.candidates()
        .map(|c| {
            format!(
                "mark {}: {} at [{:.0}, {:.0}, {:.0}, {:.0}]",
                c.id, c.label, c.bbox.x0, c.bbox.y0, c.bbox.x1, c.bbox.y1
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

const VERDICT_SHAPE: &str = "Answer with ```json {\"verdicts\": {\"<mark id>\": \"pass|fail|pending\"}, \"rationale\": \"...\", \"guidance\": \"...\"}```. Use pending when the image lacks the detail to decide.";

fn stage_template(stage: Stage) -> &'static str {
    match stage {
        Stage::Literal => "Stage 1, literal attributes: judge only what is directly visible for each numbered mark (class, colour, other attributes). Ignore spatial relations.",
        Stage::Topology => "Stage 2, spatial topology: for each numbered mark, check the stated relations against the referenced entities in this heading-aligned image (image up is straight ahead).",
        Stage::Geographic => "Stage 3, geographic boundary: for each numbered mark, check that it lies within the stated boundary landmark.",
        Stage::Combined => "Pick the single numbered mark that best matches the target, or none. Mark at most one id as pass and every other id as fail.",
    }
}

impl ReasoningOracle for RemoteOracle {
    fn detect(&self, image: &Image, prompt: &str, ctx: &OracleContext<'_>) -> Result<Vec<Detection>, OracleError> {
        let text = format!(
            "{}\nRequest: {prompt}\nList every region that could match, erring on the side of recall. Pixel boxes are [x0, y0, x1, y1] in a {}x{} image. Answer with ```json {{\"detections\": [{{\"label\": \"...\", \"bbox\": [x0, y0, x1, y1]}}]}}```.",
            constraint_text(ctx),
            image.width(),
            image.height()
        );
        let content = self.complete(&text, image)?;
        Ok(parse_detections(&content)?.0.into_iter().map(|(d, _)| d).collect())
    }

    fn verify_stage(
        &self,
        som: &SomRepresentation,
        stage: Stage,
        ctx: &OracleContext<'_>,
    ) -> Result<StageVerdictMap, OracleError> {
        let text = format!(
            "{}\n{}\nMarks:\n{}\n{VERDICT_SHAPE}",
            constraint_text(ctx),
            stage_template(stage),
            marks_text(som)
        );
        let content = self.complete(&text, &som.annotated)?;
        let ids: BTreeSet<u32> = som.ids().collect();
        parse_verdicts(&content, &ids)
    }

    fn pick_target(&self, som: &SomRepresentation, ctx: &OracleContext<'_>) -> Result<StageVerdictMap, OracleError> {
        let mut m = self.verify_stage(som, Stage::Combined, ctx)?;
        let mut seen = false;
        for v in m.verdicts.values_mut() {
            if *v == StageOutcome::Pass {
                if seen {
                    *v = StageOutcome::Fail;
                }
                seen = true;
            }
        }
        Ok(m)
    }

    fn detect_and_verify(
        &self,
        image: &Image,
        prompt: &str,
        ctx: &OracleContext<'_>,
    ) -> Result<FusedResponse, OracleError> {
        let text = format!(
            "{}\nRequest: {prompt}\nFind candidate regions and judge each against every constraint. Pixel boxes are [x0, y0, x1, y1] in a {}x{} image. Answer with ```json {{\"detections\": [{{\"label\": \"...\", \"bbox\": [x0, y0, x1, y1], \"verdict\": \"pass|fail|pending\"}}], \"rationale\": \"...\", \"guidance\": \"...\"}}```.",
            constraint_text(ctx),
            image.width(),
            image.height()
        );
        let content = self.complete(&text, image)?;
        let (dets, v) = parse_detections(&content)?;
        Ok(FusedResponse {
            detections: dets
                .into_iter()
                .map(|(d, o)| (d, o.unwrap_or(StageOutcome::Pending)))
                .collect(),
            rationale: optional_text(&v, "rationale").unwrap_or_default(),
            guidance: optional_text(&v, "guidance").filter(|g| !g.trim().is_empty()),
        })
    }
}
