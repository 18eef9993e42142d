//! Rasterizes the linear regions of a random 2-input ReLU network and draws them as ASCII.

use dtd_audit::experiment::{generate_network_with, region_map, BiasMode};
use dtd_audit::Activation;

fn main() -> dtd_audit::Result<()> {
    let net = generate_network_with(&[2, 10, 10, 1], BiasMode::NonPositive, Activation::Relu, 0)?;
    let res = 48;
    let map = region_map(&net, (-2.0, 2.0), res, 0)?;
    println!("{} regions on [-2, 2]^2", map.regions);
    const GLYPHS: &[u8] = b".:-=+*#%@abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    // Cells are stored row by row from the bottom; print the top row first.
    for row in map.cells.chunks(res).rev() {
        let line: String = row.iter().map(|c| GLYPHS[c.region_id % GLYPHS.len()] as char).collect();
        println!("{line}");
    }
    Ok(())
}
