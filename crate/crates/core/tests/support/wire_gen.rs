//! Random valid protocol messages.

use cosim::proto::{Status, WireMessage, MAX_PAYLOAD};
use proptest::prelude::*;

fn payload() -> impl Strategy<Value = Vec<u8>> {
    prop_oneof![
        3 => prop::collection::vec(any::<u8>(), 1..=64),
        1 => prop::collection::vec(any::<u8>(), 1..=MAX_PAYLOAD),
        1 => Just(vec![0xA5; MAX_PAYLOAD]),
    ]
}

fn response() -> impl Strategy<Value = (Status, Vec<u8>)> {
    prop_oneof![
        3 => payload().prop_map(|d| (Status::Ok, d)),
        1 => prop_oneof![Just(Status::AddressError), Just(Status::DisconnectAbort)].prop_map(|s| (s, Vec::new())),
    ]
}

fn len() -> impl Strategy<Value = u32> {
    prop_oneof![1u32..=MAX_PAYLOAD as u32, Just(1), Just(MAX_PAYLOAD as u32)]
}

pub fn wire_message() -> impl Strategy<Value = WireMessage> {
    prop_oneof![
        (any::<u16>(), any::<u8>(), any::<u8>()).prop_map(|(version, channel_id, role)| WireMessage::Hello {
            version,
            channel_id,
            role
        }),
        (any::<u8>(), any::<u64>(), len(), any::<u32>()).prop_map(|(bar, offset, len, tag)| WireMessage::MmioReadReq {
            bar,
            offset,
            len,
            tag
        }),
        (any::<u32>(), response()).prop_map(|(tag, (status, data))| WireMessage::MmioReadResp { tag, status, data }),
        (any::<u8>(), any::<u64>(), payload()).prop_map(|(bar, offset, data)| WireMessage::MmioWriteReq {
            bar,
            offset,
            len: data.len() as u32,
            data
        }),
        (any::<u64>(), len(), any::<u32>()).prop_map(|(addr, len, tag)| WireMessage::HostMemReadReq { addr, len, tag }),
        (any::<u32>(), response()).prop_map(|(tag, (status, data))| WireMessage::HostMemReadResp { tag, status, data }),
        (any::<u64>(), payload()).prop_map(|(addr, data)| WireMessage::HostMemWriteReq {
            addr,
            len: data.len() as u32,
            data
        }),
        any::<u16>().prop_map(|vector| WireMessage::InterruptReq { vector }),
    ]
}
