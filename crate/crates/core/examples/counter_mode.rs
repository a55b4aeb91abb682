//! Split-counter encryption of one 4 KiB region: pads, counter bumps and the
//! major-counter overflow.

use eadr_sim::cme::{bump_minor, BumpOutcome, CounterBlock};
use eadr_sim::line::xor_line;
use eadr_sim::{DataLine, Key128, OtpEngine, PhysAddr, Seed, SeedDomain};

fn main() {
    let engine = OtpEngine::new(Key128::default());
    let base = PhysAddr(0x4000);
    let mut block = CounterBlock::new(base);
    let plain = DataLine::splat_u64(0xfeed);

    for write in 0..3 {
        bump_minor(&mut block, 0);
        let (major, minor) = block.counter(0);
        let pad = engine.pad(&Seed::new(SeedDomain::RuntimeM, base, major, minor)).pad;
        let cipher = xor_line(&plain, &pad);
        println!("write {write}: counter ({major},{minor}) ciphertext {}...", &cipher.to_hex()[..32]);
    }

    let mut overflowed = 0;
    for _ in 0..200 {
        if let BumpOutcome::Overflow(lines) = bump_minor(&mut block, 1) {
            overflowed = lines.len();
        }
    }
    let (major, minor) = block.counter(1);
    println!("after 200 writes to line 1: counter ({major},{minor}), {overflowed} lines re-encrypted on overflow");
    println!("counter line: {}", block.to_line().to_hex());
}
