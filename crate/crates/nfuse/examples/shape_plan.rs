//! Print the layer-by-layer shape plan for the full-width network and
//! point out where the declared output size disagrees with arithmetic.

use nfuse::arch::{shape_plan, NetworkSpec, INPUT_EXTENT};

fn main() -> nfuse::Result<()> {
    let spec = NetworkSpec::with_widening(1)?;
    let plan = shape_plan(&spec, INPUT_EXTENT)?;
    println!("{}", plan.render());

    for row in plan.mismatches() {
        println!(
            "note: block {:?} {:?} computes {:?} but is declared as {:?}",
            row.block, row.layer, row.computed, row.declared
        );
    }
    println!("flat features into fc1: {}", spec.flat_features()?);
    Ok(())
}
