use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use meshflood_bench::sample_frames;
use meshflood_core::{decode_frame, encode_frame, pack_response, unpack_response};
use std::hint::black_box;

fn codec(c: &mut Criterion) {
    let frames = sample_frames(1024);
    let encoded: Vec<_> = frames.iter().map(encode_frame).collect();

    let mut g = c.benchmark_group("codec");
    g.throughput(Throughput::Elements(frames.len() as u64));
    g.bench_function("encode", |b| {
        b.iter(|| {
            for f in &frames {
                black_box(encode_frame(black_box(f)));
            }
        })
    });
    g.bench_function("decode", |b| {
        b.iter(|| {
            for bytes in &encoded {
                black_box(decode_frame(black_box(bytes)).unwrap());
            }
        })
    });
    g.bench_function("round_trip", |b| {
        b.iter_batched(
            || frames.clone(),
            |frames| {
                for f in &frames {
                    let bytes = encode_frame(f);
                    black_box(decode_frame(&bytes).unwrap());
                }
            },
            BatchSize::SmallInput,
        )
    });
    g.finish();

    c.bench_function("pack_unpack", |b| {
        b.iter(|| {
            for action in 1..12u32 {
                for n in [0u32, 7, 99] {
                    let packed = pack_response(black_box(action), black_box(n)).unwrap();
                    black_box(unpack_response(packed));
                }
            }
        })
    });
}

criterion_group!(benches, codec);
criterion_main!(benches);
