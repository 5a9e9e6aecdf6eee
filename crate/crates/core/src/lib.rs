//! Discrete-event model of a routed network that can run either classic IP
//! forwarding or MPLS label switching, with DiffServ queueing and a
//! compressing tunnel overlay.

pub mod control;
pub mod forwarding;
pub mod ids;
pub mod metrics;
pub mod packet;
pub mod prefix;
pub mod qos;
pub mod sim;
pub mod traffic;
pub mod tunnel;

pub use ids::{IfaceId, NextHop, NodeId};
pub use packet::{PacketRecord, TrafficClass};
pub use prefix::Prefix;
