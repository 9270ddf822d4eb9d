//! Pilot runs over inner sample sizes for a queue, to pick the nested design.

use klsens::nestedmc::{pilot, NestedDesign};
use klsens::queue::QueueConfig;

fn main() -> klsens::Result<()> {
    let queue = QueueConfig::mms(20, 100);
    let base = NestedDesign {
        outer: 20,
        inner: 0,
        sections: 10,
        confidence: 0.95,
    };
    println!("inner,zeta1,var_g_se,samples");
    for row in pilot(&queue, &base, &[5, 10, 20, 40], 17)? {
        println!("{},{:.5},{:.5},{}", row.inner, row.point, row.se, row.samples);
    }
    Ok(())
}
