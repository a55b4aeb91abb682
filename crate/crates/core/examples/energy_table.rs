//! Crash-flush energy of a fully dirty cache, default and halved hierarchy.

use eadr_sim::experiment::table3_rows;
use eadr_sim::{CacheGeometry, EnergyTable};

fn main() {
    let energies = EnergyTable::default();
    for (label, geom) in [("default", CacheGeometry::default()), ("half", CacheGeometry::default().scaled(1, 2))] {
        println!("{label} hierarchy ({} MiB):", geom.total_bytes() >> 20);
        for (scheme, mj) in table3_rows(&geom, 512 << 10, &energies) {
            println!("  {:<9} {mj:>9.4} mJ", scheme.to_string());
        }
    }
}
