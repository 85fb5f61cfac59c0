//! Ring all-reduce, reduce-scatter and all-gather on simulated devices, with
//! the bytes each member sent.

use shardcalc::collectives::{Buffer, DeviceGroup};

fn main() {
    let n = 4;
    let elements = 1024;
    let element_size = 2;
    let inputs: Vec<Buffer> = (0..n)
        .map(|i| Buffer::new(vec![i as f64 + 1.0; elements], element_size))
        .collect();
    let size = elements as u64 * element_size;

    let mut g = DeviceGroup::contiguous(n);
    let mut bufs = inputs.clone();
    g.all_reduce(&mut bufs).unwrap();
    println!("all-reduce of {size} B: every element = {}, sent {:?}", bufs[0].elements[0], g.sent_bytes());

    let mut g = DeviceGroup::contiguous(n);
    let shards = g.reduce_scatter(&inputs).unwrap();
    println!(
        "reduce-scatter: shard lengths {:?}, sent {:?}",
        shards.iter().map(Buffer::len).collect::<Vec<_>>(),
        g.sent_bytes()
    );

    let mut g = DeviceGroup::contiguous(n);
    let full = g.all_gather(&shards).unwrap();
    println!("all-gather: {} elements back on each member, sent {:?}", full[0].len(), g.sent_bytes());
    println!("expected 2·(N−1)/N·|T| = {} and (N−1)/N·|T| = {}", 2 * (n as u64 - 1) * size / n as u64, (n as u64 - 1) * size / n as u64);
}
