//! Merging per-node receiver output into one packet stream.

use crate::dsp::receiver::Reception;
use crate::simulate::SimPacket;
use crate::store::NodeObservation;

/// Joins detections of the same PDU on the same channel whose timestamps
/// are within `tolerance_us` across nodes. `receptions[n]` is node `n`.
/// The merged timestamp is the earliest detection; when a node decodes the
/// same PDU twice within the tolerance the first one is kept.
pub fn merge_receptions(receptions: &[Reception], tolerance_us: i64) -> Vec<SimPacket> {
    let nodes = receptions.len();
    let mut all: Vec<(i64, usize, usize)> = receptions
        .iter()
        .enumerate()
        .flat_map(|(n, r)| r.packets.iter().enumerate().map(move |(i, p)| (p.features.timestamp, n, i)))
        .collect();
    all.sort_unstable();
    let mut used = vec![false; all.len()];
    let mut out = Vec::new();
    for a in 0..all.len() {
        if used[a] {
            continue;
        }
        let (ts, n, i) = all[a];
        let head = &receptions[n].packets[i];
        let mut phy = vec![NodeObservation::default(); nodes];
        let f = head.features;
        phy[n] = NodeObservation { rss: Some(f.rss), cfo: Some(f.cfo), aoa: Some(f.aoa) };
        used[a] = true;
        for b in a + 1..all.len() {
            let (tb, nb, ib) = all[b];
            if tb - ts > tolerance_us {
                break;
            }
            let p = &receptions[nb].packets[ib];
            if used[b] || !phy[nb].is_null() || p.channel != head.channel || p.pdu != head.pdu {
                continue;
            }
            let f = p.features;
            phy[nb] = NodeObservation { rss: Some(f.rss), cfo: Some(f.cfo), aoa: Some(f.aoa) };
            used[b] = true;
        }
        out.push(SimPacket { ts_us: ts, addr: head.frame.adv_address, channel: head.channel, pdu: head.pdu.clone(), phy });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::receiver::ReceivedPacket;
    use crate::dsp::PhyFeatures;
    use crate::frames::{AdElement, AdvAddress, AdvChannel, AdvFrame};

    fn rx(ts: i64, addr: u64, aoa: f64) -> ReceivedPacket {
        let ch = AdvChannel::new(38).unwrap();
        let frame = AdvFrame::new(AdvAddress::from_u64(addr), ch, vec![AdElement::manufacturer(0x004C, vec![0x10, 0x01, 0x00])]);
        ReceivedPacket {
            channel: ch,
            pdu: frame.to_bytes().unwrap(),
            frame,
            features: PhyFeatures { timestamp: ts, rss: -50.0, cfo: 1000.0, aoa },
        }
    }

    #[test]
    fn joins_across_nodes() {
        let a = Reception { packets: vec![rx(100, 1, 10.0), rx(5000, 2, 1.0)], rejected: 0 };
        let b = Reception { packets: vec![rx(101, 1, -20.0), rx(4000, 1, 3.0)], rejected: 0 };
        let c = Reception::default();
        let m = merge_receptions(&[a, b, c], 2);
        assert_eq!(m.len(), 3);
        assert_eq!(m[0].ts_us, 100);
        assert_eq!((m[0].phy[0].aoa, m[0].phy[1].aoa, m[0].phy[2].aoa), (Some(10.0), Some(-20.0), None));
        assert_eq!((m[1].ts_us, m[1].phy[0].is_null()), (4000, true));
        assert_eq!(m[2].addr, AdvAddress::from_u64(2));
    }
}
