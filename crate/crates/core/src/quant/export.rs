use std::fmt::Write as _;
use std::path::Path;

use super::metrics::NamedMetrics;
use crate::error::{ensure, Result};
use crate::tensor::RealTensor;

/// Binary 8-bit PGM of a 2-d map, linearly windowed to `[lo, hi]`.
pub fn pgm_bytes(map: &RealTensor, lo: f64, hi: f64) -> Result<Vec<u8>> {
    ensure(map.ndim() == 2, || "PGM export needs a 2-d map".into())?;
    ensure(hi > lo, || format!("window [{lo}, {hi}] is empty"))?;
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|&v| {
        let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        (t * 255.0).round() as u8
    }));
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, map: &RealTensor, lo: f64, hi: f64) -> Result<()> {
    crate::io_util::write_atomic(path.as_ref(), &pgm_bytes(map, lo, hi)?)
}

pub fn metrics_csv(rows: &[NamedMetrics]) -> String {
    let mut out = String::from("map,psnr,ssim,rmse,hfen\n");
    for r in rows {
        let m = &r.report;
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.name, m.psnr, m.ssim, m.rmse, m.hfen
        )
        .unwrap();
    }
    out
}

pub fn metrics_json(rows: &[NamedMetrics]) -> String {
    serde_json::to_string_pretty(rows).expect("metrics serialize") + "\n"
}
