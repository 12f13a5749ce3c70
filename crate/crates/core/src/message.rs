//! Protocol message kinds and their compact wire encoding.
//!
//! A message carries a 3-bit kind tag, a 1-bit outcome flag (used only by
//! `Win`) and a `ceil(log2 K)`-bit priority (used only by `RequestLock`),
//! where `K` is the priority-range size of the run. The wire size therefore
//! depends only on `K`, never on the node count or the port bound.

use serde::{Deserialize, Serialize};

/// Port label. Label `0` is the node's loopback port; labels `1..=delta`
/// are connection slots managed by the adversary.
pub type Port = u8;

/// The eight message kinds exchanged by the locking protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Message {
    /// An initiator announces it wants to lock the receiver.
    Prepare,
    /// A participant admits the sender as an applicant.
    Ready,
    /// An initiator competes with a freshly drawn priority.
    RequestLock { priority: u16 },
    /// A participant reports the outcome of one competition trial.
    Win { outcome: bool },
    /// The winning initiator claims the participant's lock variable.
    SetLock,
    /// A participant confirms its lock variable now points at the sender.
    AckLock,
    /// The holder releases a previously acquired lock.
    ReleaseLock,
    /// A participant confirms the release.
    AckUnlock,
}

impl Message {
    /// Stable 3-bit kind code used on the wire and in traces.
    pub fn kind_code(self) -> u8 {
        match self {
            Message::Prepare => 0,
            Message::Ready => 1,
            Message::RequestLock { .. } => 2,
            Message::Win { .. } => 3,
            Message::SetLock => 4,
            Message::AckLock => 5,
            Message::ReleaseLock => 6,
            Message::AckUnlock => 7,
        }
    }

    /// Short stable name, used in traces and diagnostics.
    pub fn kind_name(self) -> &'static str {
        match self {
            Message::Prepare => "PREPARE",
            Message::Ready => "READY",
            Message::RequestLock { .. } => "REQUEST_LOCK",
            Message::Win { .. } => "WIN",
            Message::SetLock => "SET_LOCK",
            Message::AckLock => "ACK_LOCK",
            Message::ReleaseLock => "RELEASE_LOCK",
            Message::AckUnlock => "ACK_UNLOCK",
        }
    }

    /// Encodes the message into the low `wire_bits(k)` bits of a word.
    ///
    /// Layout, LSB first: kind (3 bits), outcome (1 bit), priority
    /// (`priority_bits(k)` bits). Fields unused by a kind are zero.
    ///
    /// Panics if a carried priority is outside `0..k` — the protocol never
    /// draws one, so this is a simulator bug guard.
    pub fn encode(self, k: u16) -> u32 {
        let mut word = u32::from(self.kind_code());
        match self {
            Message::Win { outcome } => word |= u32::from(outcome) << 3,
            Message::RequestLock { priority } => {
                assert!(priority < k, "priority {priority} out of range 0..{k}");
                word |= u32::from(priority) << 4;
            }
            _ => {}
        }
        word
    }

    /// Decodes a word produced by [`Message::encode`] with the same `k`.
    /// Returns `None` if unused bits are set or a priority is out of range.
    pub fn decode(word: u32, k: u16) -> Option<Message> {
        let kind = (word & 0b111) as u8;
        let outcome = (word >> 3) & 1 == 1;
        let priority = (word >> 4) as u16;
        if word >> (4 + priority_bits(k)) != 0 {
            return None;
        }
        let msg = match kind {
            0 => Message::Prepare,
            1 => Message::Ready,
            2 => Message::RequestLock { priority },
            3 => Message::Win { outcome },
            4 => Message::SetLock,
            5 => Message::AckLock,
            6 => Message::ReleaseLock,
            7 => Message::AckUnlock,
            _ => unreachable!(),
        };
        // Reject words that set fields their kind does not carry.
        if msg.encode(k.max(priority + 1)) != word || (kind == 2 && priority >= k) {
            return None;
        }
        Some(msg)
    }
}

/// Bits needed for a priority drawn from `0..k`: `ceil(log2 k)`.
pub fn priority_bits(k: u16) -> u32 {
    assert!(k >= 1, "priority range must be non-empty");
    32 - u32::from(k - 1).leading_zeros()
}

/// Total wire size of one message in bits: kind + outcome + priority.
pub fn wire_bits(k: u16) -> u32 {
    3 + 1 + priority_bits(k)
}

/// Wire size rounded up to whole bytes.
pub fn wire_bytes(k: u16) -> usize {
    wire_bits(k).div_ceil(8) as usize
}
