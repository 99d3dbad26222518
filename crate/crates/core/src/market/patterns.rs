//! Rule predicates for the eight reversal patterns.
//!
//! A window splits into a trend prefix and the trailing signal bars
//! ([`PatternClass::signal_len`] of them). Body sizes are judged against the
//! mean absolute body of the prefix bars:
//!
//! * long body: at least [`LONG_BODY_RATIO`] times the prefix mean
//! * small body: at most [`SMALL_BODY_RATIO`] times the prefix mean
//!
//! The prefix is a downtrend when both its net move (last close minus first
//! open) and the least-squares slope of its closes are negative; an uptrend
//! when both are positive. Every pattern requires a trend, so a flat window
//! matches nothing.
//!
//! | pattern | trend | signal bars |
//! |---|---|---|
//! | morning star | down | long black, small, white closing above the first body's midpoint |
//! | evening star | up | long white, small, black closing below the first body's midpoint |
//! | bullish engulfing | down | black, then white with open ≤ prior close and close ≥ prior open |
//! | bearish engulfing | up | white, then black with open ≥ prior close and close ≤ prior open |
//! | bullish harami | down | long black, then small white body inside it |
//! | bearish harami | up | long white, then small black body inside it |
//! | inverted hammer | down | small body, upper shadow ≥ 2× body and ≥ 2× lower shadow |
//! | shooting star | up | same shape as the inverted hammer |

use super::{OhlcBar, PatternClass, Window};

pub const LONG_BODY_RATIO: f64 = 1.5;
pub const SMALL_BODY_RATIO: f64 = 0.5;
pub const SHADOW_RATIO: f64 = 2.0;
/// Shortest trend prefix a rule will read.
pub const MIN_TREND_BARS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trend {
    Up,
    Down,
    Flat,
}

pub fn trend(prefix: &[OhlcBar]) -> Trend {
    if prefix.len() < MIN_TREND_BARS {
        return Trend::Flat;
    }
    let net = prefix[prefix.len() - 1].close - prefix[0].open;
    let slope = close_slope(prefix);
    if net < 0.0 && slope < 0.0 {
        Trend::Down
    } else if net > 0.0 && slope > 0.0 {
        Trend::Up
    } else {
        Trend::Flat
    }
}

fn close_slope(bars: &[OhlcBar]) -> f64 {
    let n = bars.len() as f64;
    let mean_t = (n - 1.0) / 2.0;
    let mean_c = bars.iter().map(|b| b.close).sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, b) in bars.iter().enumerate() {
        let dt = t as f64 - mean_t;
        num += dt * (b.close - mean_c);
        den += dt * dt;
    }
    num / den
}

pub fn mean_body(bars: &[OhlcBar]) -> f64 {
    bars.iter().map(OhlcBar::body).sum::<f64>() / bars.len() as f64
}

struct Context<'a> {
    trend: Trend,
    mean_body: f64,
    signal: &'a [OhlcBar],
}

impl Context<'_> {
    fn is_long(&self, bar: &OhlcBar) -> bool {
        bar.body() >= LONG_BODY_RATIO * self.mean_body
    }

    fn is_small(&self, bar: &OhlcBar) -> bool {
        bar.body() <= SMALL_BODY_RATIO * self.mean_body
    }
}

fn context(window: &Window, signal_len: usize) -> Option<Context<'_>> {
    let bars = window.bars();
    if bars.len() < signal_len + MIN_TREND_BARS {
        return None;
    }
    let (prefix, signal) = bars.split_at(bars.len() - signal_len);
    let mean_body = mean_body(prefix);
    if !(mean_body > 0.0) {
        return None;
    }
    Some(Context {
        trend: trend(prefix),
        mean_body,
        signal,
    })
}

/// True when the trailing bars of `window` satisfy the rule for `class`.
/// Windows too short for the rule return false.
pub fn validate_pattern(window: &Window, class: PatternClass) -> bool {
    let Some(ctx) = context(window, class.signal_len()) else {
        return false;
    };
    let s = ctx.signal;
    match class {
        PatternClass::MorningStar => {
            ctx.trend == Trend::Down
                && s[0].is_black()
                && ctx.is_long(&s[0])
                && ctx.is_small(&s[1])
                && s[2].is_white()
                && s[2].close > s[0].body_mid()
        }
        PatternClass::EveningStar => {
            ctx.trend == Trend::Up
                && s[0].is_white()
                && ctx.is_long(&s[0])
                && ctx.is_small(&s[1])
                && s[2].is_black()
                && s[2].close < s[0].body_mid()
        }
        PatternClass::BullishEngulfing => {
            ctx.trend == Trend::Down
                && s[0].is_black()
                && s[1].is_white()
                && s[1].open <= s[0].close
                && s[1].close >= s[0].open
        }
        PatternClass::BearishEngulfing => {
            ctx.trend == Trend::Up
                && s[0].is_white()
                && s[1].is_black()
                && s[1].open >= s[0].close
                && s[1].close <= s[0].open
        }
        PatternClass::BullishHarami => {
            ctx.trend == Trend::Down
                && s[0].is_black()
                && ctx.is_long(&s[0])
                && s[1].is_white()
                && ctx.is_small(&s[1])
                && inside_body(&s[1], &s[0])
        }
        PatternClass::BearishHarami => {
            ctx.trend == Trend::Up
                && s[0].is_white()
                && ctx.is_long(&s[0])
                && s[1].is_black()
                && ctx.is_small(&s[1])
                && inside_body(&s[1], &s[0])
        }
        PatternClass::ShootingStar => ctx.trend == Trend::Up && star_shape(&ctx, &s[0]),
        PatternClass::InvertedHammer => ctx.trend == Trend::Down && star_shape(&ctx, &s[0]),
    }
}

fn inside_body(inner: &OhlcBar, outer: &OhlcBar) -> bool {
    inner.body_bottom() >= outer.body_bottom() && inner.body_top() <= outer.body_top()
}

fn star_shape(ctx: &Context<'_>, bar: &OhlcBar) -> bool {
    let upper = bar.upper_shadow();
    ctx.is_small(bar)
        && upper > 0.0
        && upper >= SHADOW_RATIO * bar.body()
        && upper >= SHADOW_RATIO * bar.lower_shadow()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar(t: i64, open: f64, close: f64) -> OhlcBar {
        OhlcBar::new(t, open, open.max(close), open.min(close), close).unwrap()
    }

    /// Seven falling bars of body 4 ending at a close of 100.
    fn downtrend() -> Vec<OhlcBar> {
        (0..7)
            .map(|i| bar(i, 128.0 - 4.0 * i as f64, 124.0 - 4.0 * i as f64))
            .collect()
    }

    fn morning_star(third_close: f64) -> Window {
        let mut bars = downtrend();
        bars.push(bar(7, 100.0, 90.0));
        bars.push(bar(8, 89.0, 88.5));
        bars.push(bar(9, 89.0, third_close));
        Window::new(bars).unwrap()
    }

    #[test]
    fn morning_star_closing_above_midpoint() {
        // midpoint of the first body is 95
        assert!(validate_pattern(&morning_star(96.0), PatternClass::MorningStar));
    }

    #[test]
    fn morning_star_closing_below_midpoint() {
        assert!(!validate_pattern(&morning_star(92.0), PatternClass::MorningStar));
    }

    #[test]
    fn morning_star_is_not_evening_star() {
        assert!(!validate_pattern(&morning_star(96.0), PatternClass::EveningStar));
    }

    #[test]
    fn flat_window_matches_nothing() {
        let bars: Vec<OhlcBar> = (0..10)
            .map(|i| OhlcBar::new(i, 10.0, 11.0, 9.0, 10.5).unwrap())
            .collect();
        let w = Window::new(bars).unwrap();
        for c in PatternClass::ALL {
            assert!(!validate_pattern(&w, c), "{c}");
        }
    }

    #[test]
    fn short_windows_return_false() {
        let bars: Vec<OhlcBar> = downtrend().into_iter().take(3).collect();
        let w = Window::new(bars).unwrap();
        assert!(!validate_pattern(&w, PatternClass::MorningStar));
    }

    #[test]
    fn bullish_engulfing_rule() {
        let mut bars = downtrend();
        bars.push(bar(7, 100.0, 98.0));
        bars.push(bar(8, 97.5, 101.0));
        let w = Window::new(bars.clone()).unwrap();
        assert!(validate_pattern(&w, PatternClass::BullishEngulfing));
        assert!(!validate_pattern(&w, PatternClass::BearishEngulfing));
        // close falls short of the prior open
        bars[8] = bar(8, 97.5, 99.0);
        let w = Window::new(bars).unwrap();
        assert!(!validate_pattern(&w, PatternClass::BullishEngulfing));
    }

    #[test]
    fn bullish_harami_rule() {
        let mut bars = downtrend();
        bars.push(bar(7, 100.0, 90.0));
        bars.push(bar(8, 93.0, 94.0));
        let w = Window::new(bars).unwrap();
        assert!(validate_pattern(&w, PatternClass::BullishHarami));
        assert!(!validate_pattern(&w, PatternClass::BearishHarami));
    }

    #[test]
    fn inverted_hammer_rule() {
        let mut bars = downtrend();
        bars.push(bar(7, 100.0, 99.0));
        bars.push(bar(8, 99.0, 98.5));
        let mut last = bar(9, 98.0, 98.5);
        last.high = 101.0;
        last.low = 97.9;
        bars.push(last);
        let w = Window::new(bars).unwrap();
        assert!(validate_pattern(&w, PatternClass::InvertedHammer));
        assert!(!validate_pattern(&w, PatternClass::ShootingStar));
    }
}
