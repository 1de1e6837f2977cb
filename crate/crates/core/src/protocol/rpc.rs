//! `http_rpc`: `POST /rpc` with an encoded [`Envelope`] as the body,
//! answered by `{"ok":true}`.

use super::a2a::base_url;
use super::http::post_json_with;
use super::{encode_envelope, Envelope, ProtocolError, RetryPolicy};

pub const RPC_PATH: &str = "/rpc";

pub fn deliver_rpc(endpoint: &str, e: &Envelope) -> Result<(), ProtocolError> {
    deliver_rpc_with(endpoint, e, "", RetryPolicy::default())
}

/// `query` is appended verbatim after `?` when non-empty.
pub fn deliver_rpc_with(endpoint: &str, e: &Envelope, query: &str, policy: RetryPolicy) -> Result<(), ProtocolError> {
    let url = with_query(format!("{}{RPC_PATH}", base_url(endpoint)), query);
    let (status, body) = post_json_with(&url, &encode_envelope(e), policy)?;
    if status == 200 {
        Ok(())
    } else {
        Err(ProtocolError::Status { status, body: String::from_utf8_lossy(&body).into_owned() })
    }
}

pub(crate) fn with_query(url: String, query: &str) -> String {
    if query.is_empty() {
        url
    } else {
        format!("{url}?{query}")
    }
}
