use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::canonical::{Canonical, DecodeError, Decoder, Encoder};
use super::crypto::Digest;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClaimError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("altitude must be finite")]
    Altitude,
    #[error("claim key must be non-empty")]
    EmptyKey,
}

/// Geographic position: degrees latitude/longitude, meters altitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
    alt: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64, alt: f64) -> Result<Self, ClaimError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(ClaimError::Latitude(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(ClaimError::Longitude(lon));
        }
        if !alt.is_finite() {
            return Err(ClaimError::Altitude);
        }
        Ok(GeoPoint { lat, lon, alt })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn alt(&self) -> f64 {
        self.alt
    }
}

impl<'de> Deserialize<'de> for GeoPoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            lat: f64,
            lon: f64,
            #[serde(default)]
            alt: f64,
        }
        let raw = Raw::deserialize(d)?;
        GeoPoint::new(raw.lat, raw.lon, raw.alt).map_err(serde::de::Error::custom)
    }
}

impl Canonical for GeoPoint {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.f64(self.lat).f64(self.lon).f64(self.alt);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let (lat, lon, alt) = (dec.f64()?, dec.f64()?, dec.f64()?);
        GeoPoint::new(lat, lon, alt).map_err(|e| DecodeError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimValue {
    Bytes(#[serde(with = "crate::model::hex_bytes")] Vec<u8>),
    Text(String),
    Integer(i64),
    Digest(Digest),
    Geo(GeoPoint),
}

impl ClaimValue {
    pub fn as_integer(&self) -> Option<i64> {
        match self {
            ClaimValue::Integer(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_geo(&self) -> Option<&GeoPoint> {
        match self {
            ClaimValue::Geo(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_digest(&self) -> Option<&Digest> {
        match self {
            ClaimValue::Digest(d) => Some(d),
            _ => None,
        }
    }
}

impl Canonical for ClaimValue {
    fn encode_to(&self, enc: &mut Encoder) {
        match self {
            ClaimValue::Bytes(b) => enc.u8(0).bytes(b),
            ClaimValue::Text(s) => enc.u8(1).str(s),
            ClaimValue::Integer(v) => enc.u8(2).i64(*v),
            ClaimValue::Digest(d) => enc.u8(3).encode(d),
            ClaimValue::Geo(g) => enc.u8(4).encode(g),
        };
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => ClaimValue::Bytes(dec.bytes()?),
            1 => ClaimValue::Text(dec.string()?),
            2 => ClaimValue::Integer(dec.i64()?),
            3 => ClaimValue::Digest(dec.decode()?),
            4 => ClaimValue::Geo(dec.decode()?),
            tag => return Err(DecodeError::BadTag { what: "claim value", tag }),
        })
    }
}

/// Claim key to value, iterated in ascending byte order of keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ClaimSet {
    entries: BTreeMap<String, ClaimValue>,
}

impl ClaimSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a claim; returns the previous value.
    pub fn insert(
        &mut self,
        key: impl Into<String>,
        value: ClaimValue,
    ) -> Result<Option<ClaimValue>, ClaimError> {
        let key = key.into();
        if key.is_empty() {
            return Err(ClaimError::EmptyKey);
        }
        Ok(self.entries.insert(key, value))
    }

    pub fn with(mut self, key: impl Into<String>, value: ClaimValue) -> Result<Self, ClaimError> {
        self.insert(key, value)?;
        Ok(self)
    }

    pub fn get(&self, key: &str) -> Option<&ClaimValue> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn remove(&mut self, key: &str) -> Option<ClaimValue> {
        self.entries.remove(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ClaimValue)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

impl<'de> Deserialize<'de> for ClaimSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let entries = BTreeMap::<String, ClaimValue>::deserialize(d)?;
        if entries.keys().any(String::is_empty) {
            return Err(serde::de::Error::custom(ClaimError::EmptyKey));
        }
        Ok(ClaimSet { entries })
    }
}

impl Canonical for ClaimSet {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.len(self.entries.len());
        for (k, v) in &self.entries {
            enc.str(k).encode(v);
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let pairs = dec.list(|d| Ok((d.string()?, d.decode::<ClaimValue>()?)))?;
        let mut entries = BTreeMap::new();
        let mut prev: Option<&str> = None;
        for (k, _) in &pairs {
            if k.is_empty() {
                return Err(DecodeError::Invalid("empty claim key".into()));
            }
            // Canonical form requires strictly ascending keys.
            if prev.is_some_and(|p| p.as_bytes() >= k.as_bytes()) {
                return Err(DecodeError::Invalid("claim keys not strictly ascending".into()));
            }
            prev = Some(k);
        }
        for (k, v) in pairs {
            entries.insert(k, v);
        }
        Ok(ClaimSet { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geo_bounds() {
        assert!(GeoPoint::new(90.0, 180.0, 0.0).is_ok());
        assert!(GeoPoint::new(-90.0, -180.0, -10.0).is_ok());
        assert_eq!(GeoPoint::new(90.5, 0.0, 0.0), Err(ClaimError::Latitude(90.5)));
        assert_eq!(GeoPoint::new(0.0, -180.1, 0.0), Err(ClaimError::Longitude(-180.1)));
        assert!(GeoPoint::new(f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let mut a = ClaimSet::new();
        a.insert("b", ClaimValue::Integer(2)).unwrap();
        a.insert("a", ClaimValue::Text("x".into())).unwrap();
        let mut b = ClaimSet::new();
        b.insert("a", ClaimValue::Text("x".into())).unwrap();
        b.insert("b", ClaimValue::Integer(2)).unwrap();
        assert_eq!(a.to_canonical_bytes(), b.to_canonical_bytes());
        assert_eq!(a.keys().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn empty_key_rejected() {
        assert_eq!(ClaimSet::new().insert("", ClaimValue::Integer(0)), Err(ClaimError::EmptyKey));
    }

    #[test]
    fn unsorted_encoding_rejected() {
        let mut enc = Encoder::new();
        enc.len(2);
        enc.str("b").encode(&ClaimValue::Integer(1));
        enc.str("a").encode(&ClaimValue::Integer(1));
        assert!(ClaimSet::from_canonical_bytes(&enc.finish()).is_err());
    }
}
