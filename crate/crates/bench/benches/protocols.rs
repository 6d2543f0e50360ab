use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use datagear::protocols::opentherm::{decode_opentherm_frame, encode_opentherm_frame, MsgType, OpenThermFrame};
use datagear::protocols::{
    crc16, parse_p1_bytes, telegram_to_reading_with, verify_telegram_crc, FrameSampler, ObisMap, ReadingContext,
};
use datagear::sim::{render_telegram, DsmrVersion, MeterIdentity, RegisterSnapshot};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T0: i64 = 1_705_316_400;

fn telegram(version: DsmrVersion) -> String {
    let snap = RegisterSnapshot {
        time: T0,
        electricity_wh: [1_234_567, 7_654_321, 1_000, 0],
        gas_time: T0,
        gas_dm3: 4_321_098,
    };
    render_telegram(&MeterIdentity::new(version, 42), &snap, chrono_tz::Europe::Amsterdam)
}

fn p1(c: &mut Criterion) {
    let tz = chrono_tz::Europe::Amsterdam;
    let mut g = c.benchmark_group("p1");
    for v in DsmrVersion::ALL {
        let text = telegram(v);
        g.throughput(Throughput::Bytes(text.len() as u64));
        g.bench_function(format!("crc/{v}"), |b| b.iter(|| verify_telegram_crc(black_box(text.as_bytes()))));
        g.bench_function(format!("parse+map/{v}"), |b| {
            b.iter(|| {
                let tel = parse_p1_bytes(black_box(text.as_bytes())).unwrap();
                let ctx = ReadingContext {
                    prev_time: None,
                    capture_time: Some(T0),
                };
                telegram_to_reading_with(&tel, tz, ObisMap::builtin(), ctx).unwrap()
            })
        });
    }
    let raw = telegram(DsmrVersion::V50);
    g.bench_function("crc16/raw", |b| b.iter(|| crc16(black_box(raw.as_bytes()))));
    g.finish();
}

fn bus_words(n: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ids = [0u8, 1, 14, 15, 16, 17, 24, 25, 28, 57];
    (0..n)
        .map(|_| {
            let f = OpenThermFrame::new(MsgType::ReadAck, ids[rng.random_range(0..ids.len())], rng.random());
            encode_opentherm_frame(&f)
        })
        .collect()
}

fn opentherm(c: &mut Criterion) {
    let words = bus_words(4096);
    let mut g = c.benchmark_group("opentherm");
    g.throughput(Throughput::Elements(words.len() as u64));
    g.bench_function("decode", |b| {
        b.iter(|| words.iter().filter(|w| decode_opentherm_frame(black_box(**w)).is_ok()).count())
    });
    // one frame per second, as on a live bus
    g.bench_function("sampler", |b| {
        b.iter(|| {
            let mut s = FrameSampler::opentherm_monitor();
            let mut out = 0;
            for (i, w) in words.iter().enumerate() {
                out += s.push_word(T0 + i as i64, *w).len();
            }
            out + s.finish().len()
        })
    });
    g.finish();
}

criterion_group!(benches, p1, opentherm);
criterion_main!(benches);
