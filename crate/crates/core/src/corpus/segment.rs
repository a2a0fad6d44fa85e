//! Greedy token-aligned segmentation.

use serde::{Deserialize, Serialize};

use super::{AudioFeatures, Clip, MotionSequence, TokenAlignment, TokenAlignmentProvider};
use crate::error::{Error, Result};

const EPS: f64 = 1e-9;

/// Duration and token-count bounds for a segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentRules {
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Silences longer than this always end a segment.
    pub max_gap_s: f64,
}

impl Default for SegmentRules {
    fn default() -> Self {
        Self { min_duration_s: 1.0, max_duration_s: 2.0, min_tokens: 4, max_tokens: 8, max_gap_s: 0.5 }
    }
}

/// Why a segment ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClosedBy {
    /// The next token would have broken a bound.
    Limit,
    /// A long silence followed.
    Gap,
    /// Last token of the clip.
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: u64,
    pub clip_id: u64,
    /// Inclusive token range.
    pub first_token: usize,
    pub last_token: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub closed_by: ClosedBy,
    /// Both the duration and the token-count bounds hold.
    pub conforming: bool,
    /// Latent motif, when the corpus provides one.
    pub label: Option<u32>,
    pub audio: AudioFeatures,
    pub motion: MotionSequence,
}

impl Segment {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn token_count(&self) -> usize {
        self.last_token - self.first_token + 1
    }

    /// Terminal segments end at a pause or at the clip end.
    pub fn is_terminal(&self) -> bool {
        self.closed_by != ClosedBy::Limit
    }
}

/// Groups tokens left to right. A group is closed before the token that
/// would push it past the duration or token maximum, provided it already
/// meets both minimums; a pause longer than `max_gap_s` always closes it.
/// Tokens are never split. Returned ids are positional.
pub fn segment_by_tokens(
    alignment: &TokenAlignment,
    audio: &AudioFeatures,
    motion: &MotionSequence,
    rules: &SegmentRules,
) -> Result<Vec<Segment>> {
    let tokens = alignment.tokens();
    let mut groups: Vec<(usize, usize, ClosedBy)> = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..tokens.len() {
        if let Some(s) = start {
            let prev = i - 1;
            let gap = tokens[i].start - tokens[prev].end;
            if gap > rules.max_gap_s + EPS {
                groups.push((s, prev, ClosedBy::Gap));
                start = Some(i);
                continue;
            }
            let count = i - s;
            let current = tokens[prev].end - tokens[s].start;
            let extended = tokens[i].end - tokens[s].start;
            let overflow = extended > rules.max_duration_s + EPS || count + 1 > rules.max_tokens;
            let complete = count >= rules.min_tokens && current >= rules.min_duration_s - EPS;
            if overflow && complete {
                groups.push((s, prev, ClosedBy::Limit));
                start = Some(i);
            }
        } else {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        groups.push((s, tokens.len() - 1, ClosedBy::End));
    }

    groups
        .into_iter()
        .enumerate()
        .map(|(k, (first, last, closed_by))| {
            let (start_s, end_s) = (tokens[first].start, tokens[last].end);
            let count = last - first + 1;
            let dur = end_s - start_s;
            let conforming = (rules.min_tokens..=rules.max_tokens).contains(&count)
                && dur >= rules.min_duration_s - EPS
                && dur <= rules.max_duration_s + EPS;
            Ok(Segment {
                id: k as u64,
                clip_id: 0,
                first_token: first,
                last_token: last,
                start_s,
                end_s,
                closed_by,
                conforming,
                label: None,
                audio: slice_audio(audio, start_s, end_s)?,
                motion: slice_motion(motion, start_s, end_s)?,
            })
        })
        .collect()
}

fn frame_range(rate: f64, frames: usize, start: f64, end: f64) -> (usize, usize) {
    let lo = ((start * rate).round().max(0.0) as usize).min(frames.saturating_sub(1));
    let hi = ((end * rate).round() as usize).clamp(lo + 1, frames);
    (lo, hi)
}

fn slice_audio(a: &AudioFeatures, start: f64, end: f64) -> Result<AudioFeatures> {
    let (lo, hi) = frame_range(a.frame_rate, a.frames, start, end);
    a.slice(lo, hi)
}

fn slice_motion(m: &MotionSequence, start: f64, end: f64) -> Result<MotionSequence> {
    let (lo, hi) = frame_range(m.frame_rate, m.frames, start, end);
    m.slice(lo, hi)
}

/// Segments a clip, assigning base-wide ids and majority motif labels.
pub fn segment_clip(clip: &Clip, alignment: &TokenAlignment, rules: &SegmentRules) -> Result<Vec<Segment>> {
    let last_end = alignment.tokens().last().map_or(0.0, |t| t.end);
    if last_end > clip.motion.duration_s() + 0.5 {
        return Err(Error::invalid(format!("alignment of clip {} runs past the recording", clip.id)));
    }
    let mut segs = segment_by_tokens(alignment, &clip.audio, &clip.motion, rules)?;
    for (k, s) in segs.iter_mut().enumerate() {
        s.id = (clip.id << 20) | k as u64;
        s.clip_id = clip.id;
        if clip.token_motifs.len() == alignment.len() {
            let mut counts = std::collections::BTreeMap::new();
            for &m in &clip.token_motifs[s.first_token..=s.last_token] {
                *counts.entry(m).or_insert(0usize) += 1;
            }
            s.label = counts.into_iter().max_by_key(|&(m, c)| (c, std::cmp::Reverse(m))).map(|(m, _)| m);
        }
    }
    Ok(segs)
}

/// Segments every clip using the provider's timing.
pub fn segment_clips(
    clips: &[Clip],
    aligner: &dyn TokenAlignmentProvider,
    rules: &SegmentRules,
) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for c in clips {
        out.extend(segment_clip(c, &aligner.align(c)?, rules)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;
    use proptest::prelude::*;

    fn tracks(seconds: f64) -> (AudioFeatures, MotionSequence) {
        let n = (seconds * 30.0).ceil() as usize + 1;
        (
            AudioFeatures::new(n, 2, 30.0, vec![0.0; n * 2]).unwrap(),
            MotionSequence::new(n, 1, 3, 30.0, vec![0.0; n * 3]).unwrap(),
        )
    }

    fn uniform(count: usize, len: f64) -> TokenAlignment {
        TokenAlignment::new(
            (0..count)
                .map(|i| Token { text: format!("t{i}"), start: i as f64 * len, end: (i + 1) as f64 * len })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn twelve_quarter_second_tokens() {
        let (a, m) = tracks(3.0);
        let segs = segment_by_tokens(&uniform(12, 0.25), &a, &m, &SegmentRules::default()).unwrap();
        let counts: Vec<_> = segs.iter().map(Segment::token_count).collect();
        assert_eq!(counts, vec![8, 4]);
        assert!((segs[0].duration_s() - 2.0).abs() < 1e-12);
        assert!((segs[1].duration_s() - 1.0).abs() < 1e-12);
        assert!(segs.iter().all(|s| s.conforming));
        assert_eq!(segs[0].motion.frames, 60);
        assert_eq!(segs[1].audio.frames, 30);
    }

    #[test]
    fn single_long_token() {
        let (a, m) = tracks(3.0);
        let segs = segment_by_tokens(&uniform(1, 3.0), &a, &m, &SegmentRules::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].token_count(), 1);
        assert!(!segs[0].conforming);
        assert!(segs[0].is_terminal());
    }

    #[test]
    fn empty_alignment() {
        let (a, m) = tracks(1.0);
        let segs = segment_by_tokens(&TokenAlignment::default(), &a, &m, &SegmentRules::default()).unwrap();
        assert!(segs.is_empty());
    }

    #[test]
    fn long_gap_forces_boundary() {
        let mut toks = uniform(6, 0.25).tokens().to_vec();
        for t in toks.iter_mut().skip(3) {
            t.start += 0.8;
            t.end += 0.8;
        }
        let (a, m) = tracks(3.0);
        let al = TokenAlignment::new(toks).unwrap();
        let segs = segment_by_tokens(&al, &a, &m, &SegmentRules::default()).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].closed_by, ClosedBy::Gap);
        assert_eq!((segs[0].first_token, segs[0].last_token), (0, 2));
        assert!(!segs[0].conforming);
    }

    proptest! {
        #[test]
        fn segments_tile_and_respect_bounds(durs in proptest::collection::vec(0.13f64..0.45, 1..60)) {
            let mut t = 0.0;
            let toks: Vec<Token> = durs.iter().enumerate().map(|(i, d)| {
                let tok = Token { text: format!("t{i}"), start: t, end: t + d };
                t += d;
                tok
            }).collect();
            let (a, m) = tracks(t);
            let al = TokenAlignment::new(toks).unwrap();
            let segs = segment_by_tokens(&al, &a, &m, &SegmentRules::default()).unwrap();
            let mut next = 0;
            for s in &segs {
                prop_assert_eq!(s.first_token, next);
                next = s.last_token + 1;
                if !s.is_terminal() {
                    prop_assert!(s.conforming, "non-terminal segment {:?} breaks bounds", (s.token_count(), s.duration_s()));
                }
            }
            prop_assert_eq!(next, durs.len());
        }
    }
}
