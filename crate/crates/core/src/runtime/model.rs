use sha2::{Digest, Sha256};

use super::RunError;
use crate::graph::{ModelBackend, ModelDecl};
use crate::protocol::{Message, Role};

/// `"<agent>#<index>:<first 12 hex chars of sha256(context)>"`.
pub fn mock_model(agent: &str, invocation_index: u64, context: &str) -> Message {
    let digest = hex::encode(Sha256::digest(context.as_bytes()));
    Message::assistant_text(format!("{agent}#{invocation_index}:{}", &digest[..12]))
}

pub fn invoke_model(model: &ModelDecl, agent: &str, invocation_index: u64, context: &str) -> Result<Message, RunError> {
    match model.backend {
        ModelBackend::Mock => Ok(mock_model(agent, invocation_index, context)),
        ModelBackend::Scripted => model
            .responses
            .get(agent)
            .and_then(|replies| replies.get(invocation_index as usize))
            .map(|reply| reply.to_message(Role::Assistant))
            .ok_or_else(|| RunError::ScriptExhausted { agent: agent.to_string(), index: invocation_index }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ScriptedReply;

    #[test]
    fn mock_is_deterministic() {
        // sha256("hi") = 8f434346648f6b96df89dda901c5176b10a6d83961dd3c1ac88b59b2dc327aa4
        assert_eq!(mock_model("weather", 0, "hi"), Message::assistant_text("weather#0:8f434346648f"));
        assert_eq!(mock_model("weather", 3, ""), Message::assistant_text("weather#3:e3b0c44298fc"));
    }

    #[test]
    fn scripted_replies_in_order() {
        let m = ModelDecl::scripted("s").with_responses("weather", vec![ScriptedReply::Text("sunny".into())]);
        assert_eq!(invoke_model(&m, "weather", 0, "ignored").unwrap(), Message::assistant_text("sunny"));
        assert_eq!(
            invoke_model(&m, "weather", 1, "").unwrap_err(),
            RunError::ScriptExhausted { agent: "weather".into(), index: 1 }
        );
        assert!(invoke_model(&m, "news", 0, "").is_err());
    }
}
