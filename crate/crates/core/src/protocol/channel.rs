use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    decode_envelope, deliver_rpc, submit_task, A2aService, Envelope, HttpHandler, HttpResponse, HttpServer,
    IdempotencyCache, Message, Part, ProtocolError, RPC_PATH, TASKS_PATH,
};
use crate::spec::AgentProtocol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Inmem,
    HttpRpc,
    A2aLite,
}

impl From<AgentProtocol> for ChannelKind {
    fn from(p: AgentProtocol) -> Self {
        match p {
            AgentProtocol::Inmem => ChannelKind::Inmem,
            AgentProtocol::HttpRpc => ChannelKind::HttpRpc,
            AgentProtocol::A2aLite => ChannelKind::A2aLite,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Same-process handle; for HTTP kinds this listens on an ephemeral
    /// loopback port.
    InProcess,
    /// `host:port` to listen on.
    Listen(String),
}

enum Sink {
    Local(Sender<Envelope>),
    Remote(String),
}

/// A FIFO envelope channel. `send` may be called from many threads; `recv`
/// has a single consumer.
pub struct Channel {
    kind: ChannelKind,
    sink: Sink,
    rx: Option<Mutex<Receiver<Envelope>>>,
    server: Option<HttpServer>,
}

/// Opens the receiving side (and a sender that loops back to it).
pub fn channel_open(kind: ChannelKind, endpoint: Endpoint) -> Result<Channel, ProtocolError> {
    let (tx, rx) = mpsc::channel();
    if kind == ChannelKind::Inmem {
        return match endpoint {
            Endpoint::InProcess => Ok(Channel { kind, sink: Sink::Local(tx), rx: Some(Mutex::new(rx)), server: None }),
            Endpoint::Listen(addr) => Err(ProtocolError::Bind {
                addr,
                message: "inmem channels only take an in-process endpoint".into(),
            }),
        };
    }
    let addr = match endpoint {
        Endpoint::InProcess => "127.0.0.1:0".to_string(),
        Endpoint::Listen(addr) => addr,
    };
    let handler = receiving_handler(kind, tx);
    let server = HttpServer::bind(&addr, 4, handler)?;
    Ok(Channel { kind, sink: Sink::Remote(server.url()), rx: Some(Mutex::new(rx)), server: Some(server) })
}

/// Opens a send-only channel to a remote listener.
pub fn channel_connect(kind: ChannelKind, addr: &str) -> Result<Channel, ProtocolError> {
    if kind == ChannelKind::Inmem {
        return Err(ProtocolError::Transport("inmem channels cannot connect to an address".into()));
    }
    Ok(Channel { kind, sink: Sink::Remote(super::a2a::base_url(addr)), rx: None, server: None })
}

fn receiving_handler(kind: ChannelKind, tx: Sender<Envelope>) -> HttpHandler {
    let tx = Mutex::new(tx);
    match kind {
        ChannelKind::HttpRpc => {
            let seen = IdempotencyCache::<HttpResponse>::new();
            Arc::new(move |rq| {
                if (rq.method.as_str(), rq.path.as_str()) != ("POST", RPC_PATH) {
                    return HttpResponse::not_found();
                }
                match decode_envelope(&rq.body) {
                    Ok(e) => seen.get_or_compute(&format!("{}|{}", e.task_id(), e.src), || {
                        let _ = tx.lock().unwrap_or_else(|p| p.into_inner()).send(e.clone());
                        HttpResponse::json(200, &serde_json::json!({"ok": true}))
                    }),
                    Err(err) => HttpResponse::error(422, "malformed", err.to_string()),
                }
            })
        }
        _ => {
            let mut service = A2aService::new();
            service.register_fallback(Arc::new(move |e: &Envelope| {
                let _ = tx.lock().unwrap_or_else(|p| p.into_inner()).send(e.clone());
                Ok(Message::new(super::Role::Assistant, vec![Part::data(serde_json::json!({"accepted": true}))]))
            }));
            Arc::new(move |rq| match rq.path.as_str() {
                TASKS_PATH => service.handle(&rq),
                _ => HttpResponse::not_found(),
            })
        }
    }
}

impl Channel {
    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    /// Listening URL for HTTP kinds.
    pub fn url(&self) -> Option<String> {
        self.server.as_ref().map(HttpServer::url)
    }

    pub fn send(&self, e: &Envelope) -> Result<(), ProtocolError> {
        match &self.sink {
            Sink::Local(tx) => tx.send(e.clone()).map_err(|_| ProtocolError::Closed),
            Sink::Remote(url) => match self.kind {
                ChannelKind::HttpRpc => deliver_rpc(url, e),
                _ => submit_task(url, e).map(|_| ()),
            },
        }
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Envelope, ProtocolError> {
        let rx = self.rx.as_ref().ok_or(ProtocolError::Closed)?;
        let rx = rx.lock().unwrap_or_else(|p| p.into_inner());
        rx.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => ProtocolError::Timeout,
            RecvTimeoutError::Disconnected => ProtocolError::Closed,
        })
    }

    pub fn recv(&self) -> Result<Envelope, ProtocolError> {
        self.recv_timeout(Duration::from_secs(30))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn envelope(seq: u64) -> Envelope {
        Envelope::agent_msg("abcdefabcdefabcdefabcdefabcdef00", seq, "weather", "news", Message::user_text(format!("m{seq}")))
    }

    #[test]
    fn every_kind_is_fifo_and_lossless() {
        for kind in [ChannelKind::Inmem, ChannelKind::HttpRpc, ChannelKind::A2aLite] {
            let ch = channel_open(kind, Endpoint::InProcess).unwrap();
            let sent: Vec<Envelope> = (0..3).map(|i| envelope(i).with_route(Some("r")).with_hops(i as u32)).collect();
            for e in &sent {
                ch.send(e).unwrap();
            }
            let got: Vec<Envelope> = (0..3).map(|_| ch.recv().unwrap()).collect();
            assert_eq!(got, sent, "{kind:?}");
        }
    }

    #[test]
    fn remote_sender_reaches_listener() {
        let rx = channel_open(ChannelKind::A2aLite, Endpoint::Listen("127.0.0.1:0".into())).unwrap();
        let tx = channel_connect(ChannelKind::A2aLite, &rx.url().unwrap()).unwrap();
        tx.send(&envelope(0)).unwrap();
        assert_eq!(rx.recv().unwrap(), envelope(0));
        assert!(matches!(tx.recv_timeout(Duration::from_millis(1)), Err(ProtocolError::Closed)));
    }
}
