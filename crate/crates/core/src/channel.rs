use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

/// Accelerometer axis of the lower-back sensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    /// Vertical.
    AccV,
    /// Mediolateral.
    AccML,
    /// Anteroposterior.
    AccAP,
}

impl Channel {
    /// Storage order used by every per-channel array and file.
    pub const ALL: [Channel; 3] = [Channel::AccV, Channel::AccML, Channel::AccAP];

    pub fn name(self) -> &'static str {
        match self {
            Channel::AccV => "AccV",
            Channel::AccML => "AccML",
            Channel::AccAP => "AccAP",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Channel::AccV => 0,
            Channel::AccML => 1,
            Channel::AccAP => 2,
        }
    }

    /// Position in the fixed tie-break order AccV, AccAP, AccML used when
    /// ranking channels with equal scores.
    pub fn tie_order(self) -> usize {
        match self {
            Channel::AccV => 0,
            Channel::AccAP => 1,
            Channel::AccML => 2,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown channel `{0}` (expected AccV, AccML or AccAP)")]
pub struct UnknownChannel(pub String);

impl FromStr for Channel {
    type Err = UnknownChannel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| UnknownChannel(s.to_string()))
    }
}

/// Parses a comma-separated channel list such as `AccV,AccAP`.
pub fn parse_channel_list(s: &str) -> Result<Vec<Channel>, UnknownChannel> {
    s.split(',').map(|c| c.trim().parse()).collect()
}

pub fn format_channel_list(channels: &[Channel]) -> String {
    channels
        .iter()
        .map(|c| c.name())
        .collect::<Vec<_>>()
        .join(",")
}

/// One value per accelerometer channel, indexed by [`Channel`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct PerChannel<T>(pub [T; 3]);

impl<T> PerChannel<T> {
    pub fn from_fn(mut f: impl FnMut(Channel) -> T) -> Self {
        PerChannel(Channel::ALL.map(&mut f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Channel, &T)> {
        Channel::ALL.into_iter().zip(self.0.iter())
    }

    pub fn map<U>(&self, mut f: impl FnMut(Channel, &T) -> U) -> PerChannel<U> {
        PerChannel::from_fn(|c| f(c, &self[c]))
    }
}

impl<T> Index<Channel> for PerChannel<T> {
    type Output = T;

    fn index(&self, c: Channel) -> &T {
        &self.0[c.index()]
    }
}

impl<T> IndexMut<Channel> for PerChannel<T> {
    fn index_mut(&mut self, c: Channel) -> &mut T {
        &mut self.0[c.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for c in Channel::ALL {
            assert_eq!(c.name().parse::<Channel>().unwrap(), c);
        }
        assert!("AccX".parse::<Channel>().is_err());
        assert_eq!(
            parse_channel_list("AccV, AccAP").unwrap(),
            vec![Channel::AccV, Channel::AccAP]
        );
        assert_eq!(
            format_channel_list(&[Channel::AccML, Channel::AccV]),
            "AccML,AccV"
        );
    }
}
