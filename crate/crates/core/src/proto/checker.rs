use std::collections::VecDeque;

use super::{ChannelId, ProtoError, WireMessage};

/// Observes the traffic of one link and enforces channel discipline.
///
/// Every message must belong to its channel's message set, outstanding read
/// tags on a request channel must be pairwise distinct, and each response
/// must carry the tag of the oldest outstanding request of its pair.
#[derive(Debug, Default, Clone)]
pub struct ProtocolChecker {
    counts: [u64; 4],
    mmio_tags: VecDeque<u32>,
    host_mem_tags: VecDeque<u32>,
}

impl ProtocolChecker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, channel: ChannelId, msg: &WireMessage) -> Result<(), ProtoError> {
        if !channel.allows(msg) {
            return Err(ProtoError::ChannelDiscipline { channel, kind: msg.kind() });
        }
        self.counts[channel.index()] += 1;
        match msg {
            WireMessage::MmioReadReq { tag, .. } => push_tag(&mut self.mmio_tags, *tag, channel),
            WireMessage::HostMemReadReq { tag, .. } => push_tag(&mut self.host_mem_tags, *tag, channel),
            WireMessage::MmioReadResp { tag, .. } => pop_tag(&mut self.mmio_tags, *tag, channel),
            WireMessage::HostMemReadResp { tag, .. } => pop_tag(&mut self.host_mem_tags, *tag, channel),
            _ => Ok(()),
        }
    }

    /// Forgets outstanding exchanges after the peer went away.
    pub fn reset_outstanding(&mut self) {
        self.mmio_tags.clear();
        self.host_mem_tags.clear();
    }

    pub fn count(&self, channel: ChannelId) -> u64 {
        self.counts[channel.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn outstanding(&self, channel: ChannelId) -> usize {
        match channel {
            ChannelId::H2dReq | ChannelId::H2dResp => self.mmio_tags.len(),
            ChannelId::D2hReq | ChannelId::D2hResp => self.host_mem_tags.len(),
        }
    }
}

fn push_tag(tags: &mut VecDeque<u32>, tag: u32, channel: ChannelId) -> Result<(), ProtoError> {
    if tags.contains(&tag) {
        return Err(ProtoError::TagMismatch { channel, expected: None, got: tag });
    }
    tags.push_back(tag);
    Ok(())
}

fn pop_tag(tags: &mut VecDeque<u32>, tag: u32, channel: ChannelId) -> Result<(), ProtoError> {
    match tags.front() {
        Some(&front) if front == tag => {
            tags.pop_front();
            Ok(())
        }
        front => Err(ProtoError::TagMismatch { channel, expected: front.copied(), got: tag }),
    }
}
