use coarse::dimension::{dimension_at_scale, lift_cover, SearchStrategy};
use coarse::scenario::tower;

fn main() {
    let t = tower(3, &[5, 7, 9, 11]).unwrap();
    let v = t.covering.target().entourage("V1").unwrap().clone();
    let w = dimension_at_scale(t.covering.target(), &v, 2, SearchStrategy::Greedy, 3)
        .unwrap().expect("target cover").cover;
    println!("target cover parts: {:?}", w.parts());
    let lifted = lift_cover(&t.covering, &w, &v).unwrap();
    for c in &lifted.report.checks {
        println!("{} pass={} witness_points={:?} note={}", c.condition, c.pass, c.witness_points, c.note);
    }
}
