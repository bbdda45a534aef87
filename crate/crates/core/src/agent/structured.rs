//! The sentinel-delimited JSON section agents append to their answers.

use serde::de::DeserializeOwned;

use super::{AgentError, AgentOutput, AgentRole};

pub const START_SENTINEL: &str = "<<<STRUCTURED>>>";
pub const END_SENTINEL: &str = "<<<END>>>";

/// Free text followed by the structured section.
pub fn wrap_structured(preamble: &str, output: &AgentOutput) -> String {
    format!("{preamble}\n{START_SENTINEL}\n{}\n{END_SENTINEL}\n", output.to_json())
}

/// Text between the last start sentinel line and the end sentinel after it.
fn section(raw: &str) -> Option<&str> {
    let start = raw.rfind(START_SENTINEL)?;
    let body = &raw[start + START_SENTINEL.len()..];
    let end = body.find(END_SENTINEL)?;
    Some(body[..end].trim())
}

fn strict<T: DeserializeOwned>(json: &str) -> Result<T, AgentError> {
    serde_json::from_str(json).map_err(|e| AgentError::FieldTypeMismatch(e.to_string()))
}

/// Extracts and type-checks the structured section for `role`.
///
/// Change severities are checked against the default bands; callers with a
/// request at hand should also run [`AgentOutput::validate_against`].
pub fn parse_structured(role: AgentRole, raw: &str) -> Result<AgentOutput, AgentError> {
    let output = parse_unchecked(role, raw)?;
    output.validate(role).map_err(AgentError::InvariantViolation)?;
    Ok(output)
}

pub(crate) fn parse_unchecked(role: AgentRole, raw: &str) -> Result<AgentOutput, AgentError> {
    let json = section(raw).ok_or(AgentError::MissingSection)?;
    let output = match role {
        AgentRole::Filtration => AgentOutput::Route(strict(json)?),
        AgentRole::LidarDescriptor | AgentRole::VisionDescriptor => AgentOutput::Motion(strict(json)?),
        AgentRole::VehicleAnalyzer => AgentOutput::Diagnosis(strict(json)?),
        AgentRole::EnvChangeDetector => AgentOutput::Changes(strict(json)?),
        AgentRole::CausalAnalyst => AgentOutput::Causes(strict(json)?),
        AgentRole::ResponseAggregator => AgentOutput::Response(strict(json)?),
    };
    Ok(output)
}
