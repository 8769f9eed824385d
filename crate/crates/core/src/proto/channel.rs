use std::fmt;

use serde::Serialize;

use super::WireMessage;

/// Which side of the link a process plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Role {
    Host = 0,
    Device = 1,
}

/// Coarse direction of a message, used for trace records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    H2d,
    D2h,
    Internal,
}

/// The four unidirectional channels linking host and device.
///
/// Host-initiated accesses use the `H2d*` pair, device-initiated accesses
/// use the `D2h*` pair. Within each pair one channel carries requests and
/// the other carries the matching responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum ChannelId {
    H2dReq = 0,
    H2dResp = 1,
    D2hReq = 2,
    D2hResp = 3,
}

impl ChannelId {
    pub const ALL: [ChannelId; 4] = [ChannelId::H2dReq, ChannelId::H2dResp, ChannelId::D2hReq, ChannelId::D2hResp];

    pub fn from_u8(raw: u8) -> Option<ChannelId> {
        Self::ALL.get(raw as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// The role that writes messages onto this channel.
    pub fn sender(self) -> Role {
        match self {
            ChannelId::H2dReq | ChannelId::D2hResp => Role::Host,
            ChannelId::H2dResp | ChannelId::D2hReq => Role::Device,
        }
    }

    pub fn direction(self) -> Direction {
        match self.sender() {
            Role::Host => Direction::H2d,
            Role::Device => Direction::D2h,
        }
    }

    /// Whether `msg` belongs to this channel's message set.
    pub fn allows(self, msg: &WireMessage) -> bool {
        use WireMessage::*;
        matches!(
            (self, msg),
            (ChannelId::H2dReq, MmioReadReq { .. } | MmioWriteReq { .. })
                | (ChannelId::H2dResp, MmioReadResp { .. })
                | (ChannelId::D2hReq, HostMemReadReq { .. } | HostMemWriteReq { .. } | InterruptReq { .. })
                | (ChannelId::D2hResp, HostMemReadResp { .. })
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelId::H2dReq => "h2d_req",
            ChannelId::H2dResp => "h2d_resp",
            ChannelId::D2hReq => "d2h_req",
            ChannelId::D2hResp => "d2h_resp",
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
