use std::time::Instant;

use lem_core::secondary::{clear_sm, DcaBid, Money, SmParams, SmRequest};

fn main() {
    let bids: Vec<DcaBid> = (0..5)
        .map(|j| {
            let p0 = if j % 2 == 0 { -20.0 - j as f64 } else { 8.0 + j as f64 };
            let (lo, hi) = if p0 < 0.0 { (p0 * 1.3, p0 * 0.8) } else { (p0 * 0.7, p0 * 1.4) };
            DcaBid {
                dca_id: j,
                p0,
                q0: p0 * 0.3,
                p_lo: lo,
                p_hi: hi,
                q_lo: lo * 0.3,
                q_hi: hi * 0.3,
                beta_p: 0.3 + 0.1 * j as f64,
                beta_q: 0.5,
            }
        })
        .collect();
    let sp: f64 = bids.iter().map(|b| b.p0).sum();
    let sq: f64 = bids.iter().map(|b| b.q0).sum();
    let scores = vec![1.0, 0.9, 0.5, 0.8, 1.0];
    let fb = vec![(0.05, 0.005); 5];
    let req = SmRequest {
        bids: &bids,
        scores: &scores,
        setpoint: (sp, sq),
        budget: Money { p: -0.01, q: -0.001 },
        fallback_tariffs: &fb,
    };
    let params = SmParams::default();
    let n = 500;
    let t = Instant::now();
    let mut last = None;
    for _ in 0..n {
        last = Some(clear_sm(&req, &params).unwrap());
    }
    let dt = t.elapsed();
    println!("{:?} per clearing", dt / n);
    println!("{:#?}", last.unwrap());
}
