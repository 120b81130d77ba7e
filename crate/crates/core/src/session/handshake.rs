//! Hello / HelloAck exchange.
//!
//! Both peers send `Hello` as soon as the link is up and answer the other's
//! `Hello` with a `HelloAck`. A session is established once a peer has seen
//! an acceptable `Hello` and an `Ok` ack for its own. Both failure modes are
//! symmetric, so each side detects them from the other's `Hello` alone.

use thiserror::Error;

use super::PeerRole;
use crate::wire::{AckStatus, Hello, HelloAck, Message, WireMessage};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HandshakeError {
    #[error("role conflict: both peers claim the {0} role")]
    RoleConflict(PeerRole),

    #[error("protocol version mismatch: local version {local}, peer version {peer}")]
    VersionMismatch { local: u8, peer: u8 },

    #[error("peer rejected the handshake: {0:?}")]
    Rejected(AckStatus),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandshakeState {
    Pending,
    Established { peer: Hello },
    Failed(HandshakeError),
}

#[derive(Debug, Clone)]
pub struct Handshake {
    hello: Hello,
    peer_hello: Option<Hello>,
    acked: bool,
    state: HandshakeState,
}

impl Handshake {
    pub fn new(role: PeerRole, version: u8, width: u16, height: u16) -> Self {
        Self {
            hello: Hello {
                role,
                version,
                width,
                height,
            },
            peer_hello: None,
            acked: false,
            state: HandshakeState::Pending,
        }
    }

    /// The message this side opens with.
    pub fn hello(&self) -> WireMessage {
        WireMessage::new(Message::Hello(self.hello))
    }

    pub fn state(&self) -> &HandshakeState {
        &self.state
    }

    pub fn is_established(&self) -> bool {
        matches!(self.state, HandshakeState::Established { .. })
    }

    pub fn error(&self) -> Option<&HandshakeError> {
        match &self.state {
            HandshakeState::Failed(e) => Some(e),
            _ => None,
        }
    }

    pub fn peer(&self) -> Option<&Hello> {
        self.peer_hello.as_ref()
    }

    fn fail(&mut self, e: HandshakeError) {
        if !matches!(self.state, HandshakeState::Failed(_)) {
            self.state = HandshakeState::Failed(e);
        }
    }

    fn settle(&mut self) {
        if let (HandshakeState::Pending, Some(peer), true) = (&self.state, self.peer_hello, self.acked) {
            self.state = HandshakeState::Established { peer };
        }
    }

    /// Feeds a handshake message; returns the reply to send, if any.
    /// Other message kinds are ignored.
    pub fn on_message(&mut self, body: &Message) -> Option<WireMessage> {
        match body {
            Message::Hello(peer) => {
                self.peer_hello = Some(*peer);
                let status = if peer.version != self.hello.version {
                    self.fail(HandshakeError::VersionMismatch {
                        local: self.hello.version,
                        peer: peer.version,
                    });
                    AckStatus::VersionMismatch
                } else if peer.role == self.hello.role {
                    self.fail(HandshakeError::RoleConflict(peer.role));
                    AckStatus::RoleConflict
                } else {
                    AckStatus::Ok
                };
                self.settle();
                Some(WireMessage::new(Message::HelloAck(HelloAck {
                    status,
                    role: self.hello.role,
                    version: self.hello.version,
                })))
            }
            Message::HelloAck(ack) => {
                match ack.status {
                    AckStatus::Ok => self.acked = true,
                    status => self.fail(HandshakeError::Rejected(status)),
                }
                self.settle();
                None
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Runs both handshakes against each other in lockstep.
    fn exchange(a: &mut Handshake, b: &mut Handshake) {
        let (ha, hb) = (a.hello(), b.hello());
        let ra = a.on_message(&hb.body).unwrap();
        let rb = b.on_message(&ha.body).unwrap();
        assert!(a.on_message(&rb.body).is_none());
        assert!(b.on_message(&ra.body).is_none());
    }

    #[test]
    fn expert_and_operator_establish() {
        let mut e = Handshake::new(PeerRole::Expert, 1, 0, 0);
        let mut o = Handshake::new(PeerRole::Operator, 1, 640, 576);
        exchange(&mut e, &mut o);
        assert!(e.is_established() && o.is_established());
        assert_eq!(e.peer().unwrap().width, 640);
    }

    #[test]
    fn two_experts_conflict_on_both_sides() {
        let mut a = Handshake::new(PeerRole::Expert, 1, 0, 0);
        let mut b = Handshake::new(PeerRole::Expert, 1, 0, 0);
        exchange(&mut a, &mut b);
        for h in [&a, &b] {
            assert_eq!(h.error(), Some(&HandshakeError::RoleConflict(PeerRole::Expert)));
        }
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let mut a = Handshake::new(PeerRole::Expert, 1, 0, 0);
        let mut b = Handshake::new(PeerRole::Operator, 2, 0, 0);
        exchange(&mut a, &mut b);
        assert_eq!(a.error(), Some(&HandshakeError::VersionMismatch { local: 1, peer: 2 }));
        assert_eq!(b.error(), Some(&HandshakeError::VersionMismatch { local: 2, peer: 1 }));
        let text = a.error().unwrap().to_string();
        assert!(text.contains('1') && text.contains('2'), "{text}");
    }

    #[test]
    fn rejection_ack_fails_even_after_ok_hello() {
        let mut a = Handshake::new(PeerRole::Expert, 1, 0, 0);
        a.on_message(&Message::HelloAck(HelloAck {
            status: AckStatus::RoleConflict,
            role: PeerRole::Expert,
            version: 1,
        }));
        assert_eq!(a.error(), Some(&HandshakeError::Rejected(AckStatus::RoleConflict)));
    }
}
