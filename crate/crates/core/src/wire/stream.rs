//! Live transport: both channel kinds multiplexed over one byte stream.
//!
//! Messages are framed by their own header; the channel travels in flag
//! bit 0. A stream socket is reliable, so the media channel's only loss point
//! in live mode is the sender's [`MediaQueue`](super::MediaQueue).

use std::io::{self, Read, Write};

use log::warn;

use super::{serialize, split_frame, ChannelKind, Frame, WireError, WireMessage, FLAG_MEDIA_CHANNEL};

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Wire(#[from] WireError),

    #[error("stream ended inside a {0} byte partial message")]
    Truncated(usize),
}

/// Serializes `msg`, tagging the channel kind in the flags.
pub fn encode_for_stream(msg: &WireMessage) -> Vec<u8> {
    let mut msg = msg.clone();
    match msg.body.channel() {
        ChannelKind::Media => msg.flags |= FLAG_MEDIA_CHANNEL,
        ChannelKind::ReliableOrdered => msg.flags &= !FLAG_MEDIA_CHANNEL,
    }
    serialize(&msg)
}

pub fn write_message(out: &mut impl Write, msg: &WireMessage) -> io::Result<usize> {
    let bytes = encode_for_stream(msg);
    out.write_all(&bytes)?;
    Ok(bytes.len())
}

/// Incremental reader that skips undecodable messages.
#[derive(Debug)]
pub struct MessageReader<R> {
    inner: R,
    buf: Vec<u8>,
    skipped: u64,
}

impl<R: Read> MessageReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            buf: Vec::new(),
            skipped: 0,
        }
    }

    /// Messages dropped because their payload could not be decoded.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Next decodable message with its channel, or `None` at a clean end
    /// of stream.
    pub fn next_message(&mut self) -> Result<Option<(ChannelKind, WireMessage)>, StreamError> {
        let mut chunk = [0u8; 16 * 1024];
        loop {
            while let Some((frame, used)) = split_frame(&self.buf)? {
                self.buf.drain(..used);
                match frame {
                    Frame::Message(msg) => {
                        let channel = if msg.flags & FLAG_MEDIA_CHANNEL != 0 {
                            ChannelKind::Media
                        } else {
                            ChannelKind::ReliableOrdered
                        };
                        return Ok(Some((channel, msg)));
                    }
                    Frame::Skipped(e) => {
                        warn!("skipping undecodable message: {e}");
                        self.skipped += 1;
                    }
                }
            }
            let n = self.inner.read(&mut chunk)?;
            if n == 0 {
                return if self.buf.is_empty() {
                    Ok(None)
                } else {
                    Err(StreamError::Truncated(self.buf.len()))
                };
            }
            self.buf.extend_from_slice(&chunk[..n]);
        }
    }
}
