//! BD-rate between two RD curves with both interpolation schemes.

use uncodec::evaluation::{bd_rate_with, BdFit, RdCurve, RdPoint};

fn curve(label: &str, pts: &[(f64, f64)]) -> uncodec::Result<RdCurve> {
    let pts = pts
        .iter()
        .zip([256.0, 512.0, 1024.0, 2048.0])
        .map(|(&(bpp, psnr_db), lambda)| RdPoint { lambda, bpp, psnr_db })
        .collect();
    RdCurve::new(label, pts)
}

fn main() -> uncodec::Result<()> {
    let anchor = curve("anchor", &[(0.08, 29.1), (0.14, 31.0), (0.25, 32.8), (0.44, 34.5)])?;
    let test = curve("test", &[(0.07, 29.3), (0.12, 31.1), (0.22, 33.0), (0.40, 34.6)])?;
    for fit in [BdFit::Cubic, BdFit::Pchip] {
        println!("{fit:?}: {:+.2}%", bd_rate_with(&test, &anchor, fit)?);
    }
    Ok(())
}
