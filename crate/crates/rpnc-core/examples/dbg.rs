use rpnc_core::simnet::*;
fn main() {
    let mut cfg = SimConfig::default();
    cfg.slots = 40;
    cfg.traffic.payload_size = 64;
    cfg.data_section = 128;
    cfg.channel.per_single = PerCurve::Fixed { per: 0.0 };
    cfg.channel.per_xor = PerCurve::Fixed { per: 0.0 };
    cfg.channel.per_downlink = PerCurve::Fixed { per: 0.0 };
    let m = run(&cfg).unwrap();
    println!("slots_run {}", m.slots_run);
    println!("relay: xor {} single {} idle {} failed {} fwd {} beacons {}", m.relay.xor_slots, m.relay.single_slots, m.relay.idle_slots, m.relay.failed_slots, m.relay.forwarded, m.relay.beacons);
    println!("a_to_b delivered {} b_to_a {}", m.a_to_b.delivered, m.b_to_a.delivered);
    println!("arq_a sent {} retx {} rtt_samples {} | arq_b sent {}", m.arq_a.data_packets_sent, m.arq_a.retransmissions, m.arq_a.rtt_samples, m.arq_b.data_packets_sent);
    println!("decode_times_a {} decode_times_b {}", m.timing_a.decode_times_ps.len(), m.timing_b.decode_times_ps.len());
}
