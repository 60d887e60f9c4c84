//! Simulated links.

use super::ChannelModel;

/// Serialization time of `bytes` at `bandwidth_bps`, in ms.
pub fn transmission_ms(bytes: usize, bandwidth_bps: f64) -> f64 {
    bytes as f64 * 8.0 / bandwidth_bps * 1000.0
}

/// Delivery time of a single message sent at `send_ms` on an idle link.
pub fn simulate_transport(bytes: usize, channel: &ChannelModel, send_ms: f64) -> f64 {
    send_ms + transmission_ms(bytes, channel.bandwidth_bps) + channel.propagation_delay_ms
}

/// One direction of a connection. Messages serialize one after another, so a
/// message never overtakes an earlier one.
#[derive(Debug, Clone)]
pub struct SimulatedLink {
    channel: ChannelModel,
    busy_until_ms: f64,
    bytes_carried: u64,
}

impl SimulatedLink {
    pub fn new(channel: ChannelModel) -> Self {
        Self {
            channel,
            busy_until_ms: f64::NEG_INFINITY,
            bytes_carried: 0,
        }
    }

    /// Queues a message; returns its delivery time.
    pub fn send(&mut self, send_ms: f64, bytes: usize) -> f64 {
        let start = send_ms.max(self.busy_until_ms);
        self.busy_until_ms = start + transmission_ms(bytes, self.channel.bandwidth_bps);
        self.bytes_carried += bytes as u64;
        self.busy_until_ms + self.channel.propagation_delay_ms
    }

    pub fn bytes_carried(&self) -> u64 {
        self.bytes_carried
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::TransportMode;
    use proptest::prelude::*;

    fn channel(mbps: f64, delay: f64) -> ChannelModel {
        ChannelModel {
            bandwidth_bps: mbps * 1e6,
            propagation_delay_ms: delay,
            mode: TransportMode::Simulated,
        }
    }

    #[test]
    fn megabyte_at_100_mbps() {
        assert!((simulate_transport(1_000_000, &channel(100.0, 5.0), 0.0) - 85.0).abs() < 1e-9);
    }

    #[test]
    fn empty_message_costs_only_delay() {
        assert_eq!(simulate_transport(0, &channel(10.0, 3.0), 7.0), 10.0);
    }

    #[test]
    fn back_to_back_messages_queue() {
        let mut link = SimulatedLink::new(channel(8.0, 2.0));
        let a = link.send(0.0, 1000);
        let b = link.send(0.0, 1000);
        assert_eq!(a, 3.0);
        assert_eq!(b, 4.0);
        assert_eq!(link.send(100.0, 0), 102.0);
        assert_eq!(link.bytes_carried(), 2000);
    }

    proptest! {
        #[test]
        fn fifo_order(msgs in prop::collection::vec((0.0f64..50.0, 0usize..100_000), 1..40)) {
            let mut link = SimulatedLink::new(channel(20.0, 4.0));
            let mut t = 0.0;
            let mut last = f64::NEG_INFINITY;
            for (gap, bytes) in msgs {
                t += gap;
                let d = link.send(t, bytes);
                prop_assert!(d >= last);
                prop_assert!(d >= simulate_transport(bytes, &channel(20.0, 4.0), t) - 1e-9);
                last = d;
            }
        }
    }
}
