//! Print every effect and its parameter table.

use fxmatch::dafx::{self, Mapping};

fn main() {
    for desc in dafx::list_effects() {
        println!("{}  ({} params)", desc.id.name(), desc.num_params());
        println!("  {}", desc.summary);
        for p in desc.params {
            let map = match p.mapping {
                Mapping::Linear => "linear",
                Mapping::Logarithmic => "log",
            };
            println!(
                "  {:<16} {:>10.3} .. {:<10.3} {:<8} {}",
                p.name, p.physical_min, p.physical_max, map, p.unit
            );
        }
        println!();
    }
}
