use super::{AudioTrack, MediaError, VideoClip};

fn clamp_i16(v: f64) -> i16 {
    v.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Hard-cut concatenation in list order.
pub fn concat_video(clips: &[VideoClip]) -> Result<VideoClip, MediaError> {
    let first = clips.first().ok_or(MediaError::EmptyList)?;
    for clip in &clips[1..] {
        if (clip.width, clip.height) != (first.width, first.height) {
            return Err(MediaError::DimMismatch {
                expected: (first.width, first.height),
                found: (clip.width, clip.height),
            });
        }
        if clip.fps != first.fps {
            return Err(MediaError::FpsMismatch { expected: first.fps, found: clip.fps });
        }
    }
    let total = clips.iter().map(|c| c.frames.len()).sum();
    let mut frames = Vec::with_capacity(total);
    for clip in clips {
        frames.extend(clip.frames.iter().cloned());
    }
    Ok(VideoClip { width: first.width, height: first.height, fps: first.fps, frames })
}

pub fn concat_audio(tracks: &[AudioTrack]) -> Result<AudioTrack, MediaError> {
    let first = tracks.first().ok_or(MediaError::EmptyList)?;
    if let Some(t) = tracks.iter().find(|t| t.sample_rate != first.sample_rate) {
        return Err(MediaError::RateMismatch { expected: first.sample_rate, found: t.sample_rate });
    }
    let samples = tracks.iter().flat_map(|t| t.samples.iter().copied()).collect();
    Ok(AudioTrack { sample_rate: first.sample_rate, samples })
}

/// Adds `gain * insert` onto `base` starting at sample `at`, saturating at
/// the 16-bit limits. Samples outside the insert window are untouched.
pub fn overlay_samples(
    base: &AudioTrack,
    insert: &AudioTrack,
    at: usize,
    gain: f64,
) -> Result<AudioTrack, MediaError> {
    if base.sample_rate != insert.sample_rate {
        return Err(MediaError::RateMismatch {
            expected: base.sample_rate,
            found: insert.sample_rate,
        });
    }
    if at.checked_add(insert.len()).is_none_or(|end| end > base.len()) {
        return Err(MediaError::Overrun { at, len: insert.len(), base_len: base.len() });
    }
    let mut out = base.clone();
    for (dst, &src) in out.samples[at..at + insert.len()].iter_mut().zip(&insert.samples) {
        let scaled = (gain * src as f64).round();
        *dst = clamp_i16(*dst as f64 + scaled);
    }
    Ok(out)
}

/// Gain-weighted sum of equal-length tracks, clamped to 16 bits. An empty
/// list yields `len` samples of silence.
pub fn mix_tracks(tracks: &[(&AudioTrack, f64)], sample_rate: u32, len: usize) -> Result<AudioTrack, MediaError> {
    for (track, _) in tracks {
        if track.sample_rate != sample_rate {
            return Err(MediaError::RateMismatch { expected: sample_rate, found: track.sample_rate });
        }
        if track.len() != len {
            return Err(MediaError::LenMismatch { expected: len, found: track.len() });
        }
    }
    let samples = (0..len)
        .map(|i| {
            let sum: f64 = tracks.iter().map(|(t, g)| g * t.samples[i] as f64).sum();
            clamp_i16(sum.round())
        })
        .collect();
    Ok(AudioTrack { sample_rate, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::SAMPLE_RATE;
    use proptest::prelude::*;

    fn clip(w: u32, h: u32, fps: u32, n: usize, v: u8) -> VideoClip {
        VideoClip::filled(w, h, fps, n, [v, v, v])
    }

    #[test]
    fn concat_counts_frames() {
        let clips = vec![clip(8, 8, 24, 129, 1), clip(8, 8, 24, 129, 2), clip(8, 8, 24, 129, 3)];
        let out = concat_video(&clips).unwrap();
        assert_eq!(out.frame_count(), 387);
        assert_eq!(out.frames[128][0], 1);
        assert_eq!(out.frames[129][0], 2);
        assert_eq!(out.frames[386][0], 3);
    }

    #[test]
    fn concat_single_is_identity() {
        let c = clip(4, 4, 24, 3, 9);
        assert_eq!(concat_video(std::slice::from_ref(&c)).unwrap(), c);
    }

    #[test]
    fn concat_rejects_mismatch() {
        let err = concat_video(&[clip(512, 512, 24, 1, 0), clip(256, 256, 24, 1, 0)]).unwrap_err();
        assert_eq!(err.code(), "E_DIM_MISMATCH");
        let err = concat_video(&[clip(4, 4, 24, 1, 0), clip(4, 4, 25, 1, 0)]).unwrap_err();
        assert_eq!(err.code(), "E_FPS_MISMATCH");
        assert_eq!(concat_video(&[]).unwrap_err(), MediaError::EmptyList);
    }

    #[test]
    fn overlay_into_silence() {
        let base = AudioTrack::silence(86000);
        let insert = AudioTrack::new((0..16000).map(|i| (i % 2000) as i16 - 1000).collect());
        let out = overlay_samples(&base, &insert, 16000, 1.0).unwrap();
        assert_eq!(&out.samples[16000..32000], &insert.samples[..]);
        assert!(out.samples[..16000].iter().all(|&s| s == 0));
        assert!(out.samples[32000..].iter().all(|&s| s == 0));
    }

    #[test]
    fn overlay_zero_gain_is_identity() {
        let base = AudioTrack::new((0..100).map(|i| i as i16 * 7).collect());
        let insert = AudioTrack::new(vec![i16::MAX; 50]);
        assert_eq!(overlay_samples(&base, &insert, 10, 0.0).unwrap(), base);
    }

    #[test]
    fn overlay_errors() {
        let base = AudioTrack::silence(10);
        let insert = AudioTrack::silence(5);
        assert_eq!(overlay_samples(&base, &insert, 6, 1.0).unwrap_err().code(), "E_OVERRUN");
        let other = AudioTrack { sample_rate: 8000, samples: vec![0; 5] };
        assert_eq!(overlay_samples(&base, &other, 0, 1.0).unwrap_err().code(), "E_RATE_MISMATCH");
    }

    #[test]
    fn overlay_saturates_instead_of_wrapping() {
        // Brute-force oracle: widen to i32, add, clamp.
        let values: Vec<i16> = vec![i16::MAX, i16::MIN, 30000, -30000, 1, 0];
        let base = AudioTrack::new(values.clone());
        let insert = AudioTrack::new(values.clone());
        let out = overlay_samples(&base, &insert, 0, 1.0).unwrap();
        for (i, &v) in values.iter().enumerate() {
            let expected = (v as i32 * 2).clamp(-32768, 32767) as i16;
            assert_eq!(out.samples[i], expected);
        }
    }

    #[test]
    fn mix_identity_and_halves() {
        let t = AudioTrack::new((0..1000).map(|i| ((i * 37) % 65536) as i16).collect());
        assert_eq!(mix_tracks(&[(&t, 1.0)], SAMPLE_RATE, 1000).unwrap(), t);
        let halves = mix_tracks(&[(&t, 0.5), (&t, 0.5)], SAMPLE_RATE, 1000).unwrap();
        for (a, b) in halves.samples.iter().zip(&t.samples) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn empty_mix_is_silence() {
        let out = mix_tracks(&[], SAMPLE_RATE, 86000).unwrap();
        assert_eq!(out.len(), 86000);
        assert!(out.samples.iter().all(|&s| s == 0));
    }

    #[test]
    fn mix_errors() {
        let a = AudioTrack::silence(10);
        let b = AudioTrack::silence(11);
        assert_eq!(mix_tracks(&[(&a, 1.0), (&b, 1.0)], SAMPLE_RATE, 10).unwrap_err().code(), "E_LEN_MISMATCH");
        let c = AudioTrack { sample_rate: 8000, samples: vec![0; 10] };
        assert_eq!(mix_tracks(&[(&c, 1.0)], SAMPLE_RATE, 10).unwrap_err().code(), "E_RATE_MISMATCH");
    }

    proptest! {
        #[test]
        fn overlay_is_local(
            base in prop::collection::vec(any::<i16>(), 1..400),
            insert in prop::collection::vec(any::<i16>(), 0..100),
            at_frac in 0.0f64..1.0,
            gain in -2.0f64..2.0,
        ) {
            prop_assume!(insert.len() <= base.len());
            let at = ((base.len() - insert.len()) as f64 * at_frac) as usize;
            let base = AudioTrack::new(base);
            let insert = AudioTrack::new(insert);
            let out = overlay_samples(&base, &insert, at, gain).unwrap();
            prop_assert_eq!(&out.samples[..at], &base.samples[..at]);
            prop_assert_eq!(&out.samples[at + insert.len()..], &base.samples[at + insert.len()..]);
        }

        #[test]
        fn mix_never_wraps(
            a in prop::collection::vec(any::<i16>(), 64),
            b in prop::collection::vec(any::<i16>(), 64),
            ga in 0.0f64..3.0,
            gb in 0.0f64..3.0,
        ) {
            let a = AudioTrack::new(a);
            let b = AudioTrack::new(b);
            let out = mix_tracks(&[(&a, ga), (&b, gb)], SAMPLE_RATE, 64).unwrap();
            for i in 0..64 {
                let exact = ga * a.samples[i] as f64 + gb * b.samples[i] as f64;
                let expected = exact.round().clamp(-32768.0, 32767.0) as i16;
                prop_assert_eq!(out.samples[i], expected);
            }
        }

        #[test]
        fn concat_is_associative(n in 1usize..4, m in 1usize..4, k in 1usize..4) {
            let a = clip(3, 2, 24, n, 1);
            let b = clip(3, 2, 24, m, 2);
            let c = clip(3, 2, 24, k, 3);
            let left = concat_video(&[concat_video(&[a.clone(), b.clone()]).unwrap(), c.clone()]).unwrap();
            let right = concat_video(&[a, concat_video(&[b, c]).unwrap()]).unwrap();
            prop_assert_eq!(left, right);
        }
    }
}
