use storyreel_core::media::{frame_range_to_sample_range, frame_to_millis, frames_to_seconds, scene_sample_count};
use storyreel_core::{FrameRange, SampleRange, SAMPLE_RATE};
use num_rational::Ratio;
use proptest::prelude::*;

/// Independent oracle: exact rational seconds, scaled by the rate, floored.
fn oracle(frame: u32, fps: u32, rate: u32) -> u64 {
    let seconds = Ratio::<u128>::new(frame as u128, fps as u128);
    (seconds * Ratio::from_integer(rate as u128)).floor().to_integer() as u64
}

fn fps() -> impl Strategy<Value = u32> {
    prop_oneof![Just(24u32), 1u32..=120]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_rational_oracle(fps in fps(), a in 0u32..1_000_000, len in 1u32..10_000) {
        let fr = FrameRange { start: a, end: a + len };
        let sr = frame_range_to_sample_range(fr, fps, SAMPLE_RATE);
        prop_assert_eq!(sr, SampleRange { start: oracle(a, fps, SAMPLE_RATE), end: oracle(a + len, fps, SAMPLE_RATE) });
        prop_assert!(!sr.is_empty());
    }

    #[test]
    fn adjacent_ranges_map_to_adjacent_ranges(fps in fps(), a in 0u32..1_000_000, l1 in 1u32..5_000, l2 in 1u32..5_000) {
        let left = frame_range_to_sample_range(FrameRange { start: a, end: a + l1 }, fps, SAMPLE_RATE);
        let right = frame_range_to_sample_range(FrameRange { start: a + l1, end: a + l1 + l2 }, fps, SAMPLE_RATE);
        let whole = frame_range_to_sample_range(FrameRange { start: a, end: a + l1 + l2 }, fps, SAMPLE_RATE);
        prop_assert_eq!(left.end, right.start);
        prop_assert_eq!(left.len() + right.len(), whole.len());
    }

    #[test]
    fn disjoint_ranges_do_not_overlap(fps in fps(), a in 0u32..100_000, l1 in 1u32..500, gap in 0u32..500, l2 in 1u32..500) {
        let first = frame_range_to_sample_range(FrameRange { start: a, end: a + l1 }, fps, SAMPLE_RATE);
        let b = a + l1 + gap;
        let second = frame_range_to_sample_range(FrameRange { start: b, end: b + l2 }, fps, SAMPLE_RATE);
        prop_assert!(first.end <= second.start);
    }

    #[test]
    fn whole_second_boundaries_are_exact(fps in 1u32..=120, s in 0u32..3_600, d in 1u32..60) {
        let fr = FrameRange { start: s * fps, end: (s + d) * fps };
        let sr = frame_range_to_sample_range(fr, fps, SAMPLE_RATE);
        prop_assert_eq!(sr.start, s as u64 * 16_000);
        prop_assert_eq!(sr.end, (s + d) as u64 * 16_000);
    }

    #[test]
    fn millis_match_oracle(fps in fps(), frame in 0u32..10_000_000) {
        prop_assert_eq!(frame_to_millis(frame as u64, fps), oracle(frame, fps, 1000));
    }

    #[test]
    fn scene_lengths_sum_exactly_when_divisible(counts in prop::collection::vec(1u32..100, 1..8)) {
        // multiples of 3 frames are whole sample counts at 24 fps
        let frames: Vec<u64> = counts.iter().map(|c| *c as u64 * 3).collect();
        let total: u64 = frames.iter().sum();
        let summed: u64 = frames.iter().map(|f| scene_sample_count(*f, 24, SAMPLE_RATE)).sum();
        prop_assert_eq!(summed, scene_sample_count(total, 24, SAMPLE_RATE));
        prop_assert_eq!(Ratio::from_integer(summed), frames_to_seconds(total, 24) * 16_000);
    }
}

#[test]
fn reference_points() {
    assert_eq!(
        frame_range_to_sample_range(FrameRange { start: 0, end: 129 }, 24, SAMPLE_RATE),
        SampleRange { start: 0, end: 86_000 }
    );
    assert_eq!(
        frame_range_to_sample_range(FrameRange { start: 24, end: 48 }, 24, SAMPLE_RATE),
        SampleRange { start: 16_000, end: 32_000 }
    );
    assert_eq!(scene_sample_count(387, 24, SAMPLE_RATE), 258_000);
    assert_eq!(frames_to_seconds(387, 24), Ratio::new(129, 8));
}
