//! Weighted rendezvous hashing: keys land on candidates in proportion to
//! their weights, and removing a candidate only moves its own keys.

use megw::steering::{rendezvous_select, Weighted};

fn main() {
    let mut nodes =
        vec![Weighted::new("dip-1", 1.0), Weighted::new("dip-2", 1.0), Weighted::new("dip-3", 2.0), Weighted::new("dip-4", 2.0)];
    let keys: Vec<[u8; 8]> = (0u64..60_000).map(u64::to_be_bytes).collect();
    let before: Vec<&str> = keys.iter().map(|k| *rendezvous_select(k, &nodes).unwrap()).collect();
    for n in &nodes {
        let share = before.iter().filter(|&&c| c == n.id).count() as f64 / keys.len() as f64;
        println!("{} weight {} share {:.3}", n.id, n.weight, share);
    }

    nodes.remove(2);
    let after: Vec<&str> = keys.iter().map(|k| *rendezvous_select(k, &nodes).unwrap()).collect();
    let moved = before.iter().zip(&after).filter(|(b, a)| b != a).count();
    let orphaned = before.iter().filter(|&&c| c == "dip-3").count();
    println!("removed dip-3: {moved} keys moved, {orphaned} were on dip-3");
}
