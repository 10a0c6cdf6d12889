//! Fixtures shared by the benchmarks.

use meshflood_core::{ControlFrame, Scenario, BROADCAST};

/// A fixed spread of frames, from single-byte fields up to the widest
/// values the codec accepts.
pub fn sample_frames(n: usize) -> Vec<ControlFrame> {
    let mut x: u64 = 0x9E37_79B9_7F4A_7C15;
    (0..n)
        .map(|i| {
            // xorshift, enough to vary varint widths
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            let bits = 7 * (1 + i % 5) as u32;
            let mask = if bits >= 32 { u32::MAX } else { (1 << bits) - 1 };
            let field = |v: u64| v as u32 & mask;
            ControlFrame {
                src: field(x),
                dst: if i % 7 == 0 { BROADCAST } else { field(x >> 20) },
                msg_id: field(x >> 11),
                action: (x % 12) as u32,
            }
        })
        .collect()
}

/// The campus deployment with every link at `p_err`.
pub fn campus(p_err: f64) -> Scenario {
    Scenario::campus().with_uniform_p_err(p_err)
}
