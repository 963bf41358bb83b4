//! Client for an optional text-completion endpoint that performs entity and
//! keyword extraction.
//!
//! The endpoint receives a plain-text prompt and answers with tuple records:
//!
//! ```text
//! ("entity"<|>Pedestrian<|>Road-User<|>people walking across the road)##
//! ("relationship"<|>Pedestrian<|>Crosswalk<|>crossing point<|>right of way<|>0.9)##
//! ("content_keywords"<|>driving security, yielding)<|COMPLETE|>
//! ```
//!
//! Records that do not fit this shape are dropped with a warning.

use std::time::Duration;

use super::{EntityCategory, EntityExtractor, ExtractError, ExtractedEntity};
use crate::text::{normalize_term, token_spans};

pub const TUPLE_DELIMITER: &str = "<|>";
pub const RECORD_DELIMITER: &str = "##";
pub const COMPLETION_DELIMITER: &str = "<|COMPLETE|>";

pub const ENV_ENDPOINT_URL: &str = "KGDRIVE_ENDPOINT_URL";
pub const ENV_ENDPOINT_KEY: &str = "KGDRIVE_ENDPOINT_KEY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), api_key: None, timeout: Duration::from_secs(30) }
    }

    /// Reads [`ENV_ENDPOINT_URL`] and [`ENV_ENDPOINT_KEY`].
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(ENV_ENDPOINT_URL).ok().filter(|u| !u.is_empty())?;
        Some(Self { api_key: std::env::var(ENV_ENDPOINT_KEY).ok(), ..Self::new(url) })
    }
}

pub trait TextEndpoint: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ExtractError>;
}

/// POSTs the prompt as `text/plain` and returns the response body.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(config: EndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(config.timeout)).build().into();
        Self { config, agent }
    }
}

impl TextEndpoint for HttpEndpoint {
    fn complete(&self, prompt: &str) -> Result<String, ExtractError> {
        let mut req = self.agent.post(&self.config.url).header("Content-Type", "text/plain; charset=utf-8");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(prompt).map_err(|e| ExtractError::ExtractorUnavailable(e.to_string()))?;
        resp.body_mut().read_to_string().map_err(|e| ExtractError::ExtractorUnavailable(e.to_string()))
    }
}

const ENTITY_TYPES: &str = "Traffic-Sign-Device, Road-User, Driving-Maneuver, Road-Condition";

/// Extraction prompt for one piece of text.
pub fn extraction_prompt(text: &str) -> String {
    format!(
        "Identify every entity of the listed types in the text below, the clearly related pairs among them, \
         and the high-level keywords of the whole text.\n\
         Entity types: [{ENTITY_TYPES}]\n\
         Write each entity as (\"entity\"{t}<entity_name>{t}<entity_type>{t}<entity_description>)\n\
         Write each relationship as (\"relationship\"{t}<source_entity>{t}<target_entity>{t}<relationship_description>{t}<relationship_keywords>{t}<relationship_strength>)\n\
         Write the text keywords as (\"content_keywords\"{t}<high_level_keywords>)\n\
         Separate records with {r} and finish with {c}\n\
         Text:\n{text}\n\
         Output:\n",
        t = TUPLE_DELIMITER,
        r = RECORD_DELIMITER,
        c = COMPLETION_DELIMITER,
    )
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedExtraction {
    pub entities: Vec<(String, EntityCategory, String)>,
    pub relationships: Vec<(String, String, String, Vec<String>, f64)>,
    pub content_keywords: Vec<String>,
    pub warnings: Vec<String>,
}

fn unquote(s: &str) -> &str {
    s.trim().trim_matches('"').trim()
}

pub fn parse_category(s: &str) -> Option<EntityCategory> {
    let key: String = s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
    Some(match key.as_str() {
        "trafficsigndevice" => EntityCategory::TrafficSignDevice,
        "roaduser" => EntityCategory::RoadUser,
        "drivingmaneuver" => EntityCategory::DrivingManeuver,
        "roadcondition" => EntityCategory::RoadCondition,
        _ => return None,
    })
}

/// Parse an endpoint response in the tuple format.
pub fn parse_response(response: &str) -> Result<ParsedExtraction, ExtractError> {
    let body = response.replace(COMPLETION_DELIMITER, "");
    let mut out = ParsedExtraction::default();
    let mut seen_any = false;
    for raw in body.split(RECORD_DELIMITER).flat_map(|r| r.split('\n')) {
        let rec = raw.trim();
        if rec.is_empty() {
            continue;
        }
        let Some(inner) = rec.strip_prefix('(').and_then(|r| r.strip_suffix(')')) else {
            out.warnings.push(format!("dropped non-tuple line: {rec}"));
            continue;
        };
        let fields: Vec<&str> = inner.split(TUPLE_DELIMITER).map(unquote).collect();
        match (fields[0], fields.len()) {
            ("entity", 4) => match parse_category(fields[2]) {
                Some(cat) if !fields[1].is_empty() => {
                    seen_any = true;
                    out.entities.push((normalize_term(fields[1]), cat, fields[3].to_string()));
                }
                _ => out.warnings.push(format!("dropped entity with unknown type or empty name: {rec}")),
            },
            ("relationship", 6) => match fields[5].parse::<f64>() {
                Ok(w) if w.is_finite() => {
                    seen_any = true;
                    let kws = fields[4].split(',').map(normalize_term).filter(|k| !k.is_empty()).collect();
                    out.relationships.push((normalize_term(fields[1]), normalize_term(fields[2]), fields[3].to_string(), kws, w));
                }
                _ => out.warnings.push(format!("dropped relationship with bad strength: {rec}")),
            },
            ("content_keywords", 2) => {
                seen_any = true;
                out.content_keywords.extend(fields[1].split(',').map(normalize_term).filter(|k| !k.is_empty()));
            }
            _ => out.warnings.push(format!("dropped nonconforming record: {rec}")),
        }
    }
    if !seen_any && !response.contains(COMPLETION_DELIMITER) {
        return Err(ExtractError::MalformedExtractorOutput(response.chars().take(200).collect()));
    }
    for w in &out.warnings {
        log::warn!("{w}");
    }
    Ok(out)
}

/// Byte span of the normalized phrase `name` inside `text`, if present.
fn locate(text: &str, name: &str) -> Option<(usize, usize)> {
    let want: Vec<String> = token_spans(name).into_iter().map(|t| t.2).collect();
    if want.is_empty() {
        return None;
    }
    let toks = token_spans(text);
    toks.windows(want.len())
        .find(|w| w.iter().zip(&want).all(|(t, n)| &t.2 == n))
        .map(|w| (w[0].0, w[want.len() - 1].1))
}

pub struct ExternalExtractor<E: TextEndpoint> {
    endpoint: E,
}

impl<E: TextEndpoint> ExternalExtractor<E> {
    pub fn new(endpoint: E) -> Self {
        Self { endpoint }
    }

    pub fn query(&self, text: &str) -> Result<ParsedExtraction, ExtractError> {
        parse_response(&self.endpoint.complete(&extraction_prompt(text))?)
    }
}

impl<E: TextEndpoint> EntityExtractor for ExternalExtractor<E> {
    fn extract(&self, text: &str) -> Result<Vec<ExtractedEntity>, ExtractError> {
        let parsed = self.query(text)?;
        let mut out: Vec<ExtractedEntity> = Vec::new();
        for (name, category, _) in parsed.entities {
            // names the text does not contain are dropped rather than guessed
            let Some(span) = locate(text, &name) else {
                log::warn!("endpoint entity `{name}` not found in text; dropped");
                continue;
            };
            if let Some(e) = out.iter_mut().find(|e| e.name == name && e.category == category) {
                e.occurrences += 1;
            } else {
                out.push(ExtractedEntity { name, category, span, occurrences: 1 });
            }
        }
        Ok(out)
    }

    fn name(&self) -> &'static str {
        "external"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    struct Canned(String);
    impl TextEndpoint for Canned {
        fn complete(&self, _prompt: &str) -> Result<String, ExtractError> {
            Ok(self.0.clone())
        }
    }

    const RESPONSE: &str = "(\"entity\"<|>Pedestrians<|>Road-User<|>people on foot)##\n\
        (\"entity\"<|>Crosswalk<|>Traffic-Sign-Device<|>marked crossing)##\n\
        (\"entity\"<|>Unicorn<|>Mythical<|>not a type)##\n\
        (\"relationship\"<|>Pedestrian<|>Crosswalk<|>cross there<|>right of way, yielding<|>0.9)##\n\
        garbage line\n\
        (\"content_keywords\"<|>driving security, yielding)<|COMPLETE|>";

    #[test]
    fn parses_tuples_and_drops_nonconforming() {
        let p = parse_response(RESPONSE).unwrap();
        assert_eq!(p.entities.len(), 2);
        assert_eq!(p.entities[0].0, "pedestrian");
        assert_eq!(p.relationships.len(), 1);
        assert_eq!(p.content_keywords, ["driving security", "yielding"]);
        assert_eq!(p.warnings.len(), 2);
    }

    #[test]
    fn malformed_output_is_an_error() {
        assert!(matches!(parse_response("I cannot help with that."), Err(ExtractError::MalformedExtractorOutput(_))));
        assert!(parse_response(COMPLETION_DELIMITER).unwrap().entities.is_empty());
    }

    #[test]
    fn external_extractor_locates_spans() {
        let ex = ExternalExtractor::new(Canned(RESPONSE.into()));
        let text = "Yield to pedestrians at the crosswalk.";
        let got = ex.extract(text).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(&text[got[0].span.0..got[0].span.1], "pedestrians");
    }

    #[test]
    fn http_endpoint_round_trip() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut got = Vec::new();
            // read until the declared body has arrived
            loop {
                let n = s.read(&mut buf).unwrap();
                got.extend_from_slice(&buf[..n]);
                let txt = String::from_utf8_lossy(&got);
                if let Some(h) = txt.find("\r\n\r\n") {
                    let len = txt[..h]
                        .lines()
                        .find_map(|l| l.to_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if got.len() >= h + 4 + len {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            let body = RESPONSE;
            write!(s, "HTTP/1.1 200 OK\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}", body.len(), body).unwrap();
            String::from_utf8_lossy(&got).to_string()
        });
        let ep = HttpEndpoint::new(EndpointConfig { api_key: Some("k".into()), ..EndpointConfig::new(format!("http://{addr}/extract")) });
        let ex = ExternalExtractor::new(ep);
        let got = ex.extract("Yield to pedestrians at the crosswalk.").unwrap();
        assert_eq!(got.len(), 2);
        let request = server.join().unwrap();
        assert!(request.contains("Authorization: Bearer k") || request.contains("authorization: Bearer k"));
        assert!(request.contains("Entity types"));
    }

    #[test]
    fn unreachable_endpoint_is_unavailable() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let ep = HttpEndpoint::new(EndpointConfig { timeout: Duration::from_secs(2), ..EndpointConfig::new(format!("http://{addr}/")) });
        assert!(matches!(ExternalExtractor::new(ep).extract("x"), Err(ExtractError::ExtractorUnavailable(_))));
    }
}
