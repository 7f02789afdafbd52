use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::Value;
use zoorun::engine_worker::{Frame, FrameHeader, Op};
use zoorun::tensor::DType;

pub const OPS: [Op; 6] = [Op::Load, Op::Run, Op::Ping, Op::Close, Op::Ack, Op::Nack];

/// Random frame: any op, up to four tensors of any dtype and rank 1 to 5,
/// and a small metadata map of strings and integers.
pub fn random_frame<R: Rng>(rng: &mut R) -> Frame {
    let mut header = FrameHeader::new(*OPS.choose(rng).unwrap(), rng.gen());
    for i in 0..rng.gen_range(0..3) {
        let value = if rng.gen_bool(0.5) {
            Value::from(format!("v{}-é", rng.gen::<u32>()))
        } else {
            Value::from(rng.gen::<i64>())
        };
        header = header.with(&format!("k{i}"), value);
    }
    let tensors = (0..rng.gen_range(0..4))
        .map(|_| {
            let dtype = *DType::ALL.choose(rng).unwrap();
            let rank = rng.gen_range(1..=5);
            super::random_tensor(rng, dtype, rank)
        })
        .collect();
    Frame::new(header, tensors)
}
