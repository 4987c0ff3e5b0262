//! Canonical byte encoding and content hashing.
//!
//! Every hashed value goes through a small serde [`Serializer`] that emits a
//! tagged, length-prefixed encoding with map and struct keys sorted by their
//! encoded bytes. Reals are written as their shortest round-trip decimal and
//! non-finite reals are rejected, so the digest of a value does not depend on
//! map insertion order, platform, or float formatting.
//!
//! ```text
//! null    'n'
//! bool    't' | 'f'
//! integer 'i' len:u64be ascii-decimal
//! real    'r' len:u64be shortest-decimal
//! string  's' len:u64be utf8
//! bytes   'b' len:u64be raw
//! list    'l' count:u64be item*
//! map     'm' count:u64be (key value)*   -- sorted by encoded key
//! ```
//!
//! The format is also used to frame knowledge-base records on disk, so a
//! decoder back into [`serde_json::Value`] lives here as well.

use std::fmt;

use serde::ser::{self, Serialize};
use serde_json::{Map, Number, Value};
use sha2::{Digest, Sha256};

/// Name of the digest function, recorded in log and store headers.
pub const HASH_FUNCTION: &str = "sha256";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SerializationError {
    #[error("non-finite real {0} cannot be canonically encoded")]
    NonFinite(f64),
    #[error("{0}")]
    Custom(String),
}

impl ser::Error for SerializationError {
    fn custom<T: fmt::Display>(msg: T) -> Self {
        SerializationError::Custom(msg.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("unexpected end of input at byte {0}")]
    Truncated(usize),
    #[error("unknown tag {tag:#04x} at byte {offset}")]
    UnknownTag { tag: u8, offset: usize },
    #[error("malformed scalar at byte {0}")]
    BadScalar(usize),
    #[error("map key at byte {0} is not a string")]
    NonStringKey(usize),
    #[error("{0} trailing bytes after value")]
    Trailing(usize),
}

/// 256-bit content digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentHash([u8; 32]);

impl ContentHash {
    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        ContentHash(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(ContentHash(out))
    }

    /// Digest of raw bytes.
    pub fn digest(bytes: &[u8]) -> Self {
        let out = Sha256::digest(bytes);
        let mut buf = [0u8; 32];
        buf.copy_from_slice(&out);
        ContentHash(buf)
    }

    /// Digest of the canonical encoding of `value`.
    pub fn of<T: Serialize + ?Sized>(value: &T) -> Result<Self, SerializationError> {
        Ok(Self::digest(&to_bytes(value)?))
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for ContentHash {
    fn serialize<S: ser::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> serde::Deserialize<'de> for ContentHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ContentHash::from_hex(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid content hash {s:?}")))
    }
}

/// Canonical encoding of any serializable value.
pub fn to_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, SerializationError> {
    let mut out = Vec::new();
    value.serialize(Encoder { out: &mut out })?;
    Ok(out)
}

fn put_len(out: &mut Vec<u8>, len: usize) {
    out.extend_from_slice(&(len as u64).to_be_bytes());
}

fn put_chunk(out: &mut Vec<u8>, tag: u8, bytes: &[u8]) {
    out.push(tag);
    put_len(out, bytes.len());
    out.extend_from_slice(bytes);
}

fn put_real(out: &mut Vec<u8>, v: f64) -> Result<(), SerializationError> {
    if !v.is_finite() {
        return Err(SerializationError::NonFinite(v));
    }
    // `Display` for f64 is the shortest decimal that round-trips.
    put_chunk(out, b'r', format!("{v}").as_bytes());
    Ok(())
}

struct Encoder<'a> {
    out: &'a mut Vec<u8>,
}

pub struct SeqEncoder<'a> {
    out: &'a mut Vec<u8>,
    items: Vec<Vec<u8>>,
}

pub struct MapEncoder<'a> {
    out: &'a mut Vec<u8>,
    entries: Vec<(Vec<u8>, Vec<u8>)>,
    pending_key: Option<Vec<u8>>,
    // wraps the map as {variant: map} for struct variants
    variant: Option<&'static str>,
}

impl SeqEncoder<'_> {
    fn push<T: Serialize + ?Sized>(&mut self, v: &T) -> Result<(), SerializationError> {
        self.items.push(to_bytes(v)?);
        Ok(())
    }

    fn finish(self, variant: Option<&'static str>) {
        let mut body = Vec::new();
        body.push(b'l');
        put_len(&mut body, self.items.len());
        for item in self.items {
            body.extend_from_slice(&item);
        }
        match variant {
            None => self.out.extend_from_slice(&body),
            Some(name) => wrap_variant(self.out, name, body),
        }
    }
}

fn wrap_variant(out: &mut Vec<u8>, name: &str, body: Vec<u8>) {
    out.push(b'm');
    put_len(out, 1);
    put_chunk(out, b's', name.as_bytes());
    out.extend_from_slice(&body);
}

impl MapEncoder<'_> {
    fn finish(mut self) {
        self.entries.sort_by(|a, b| a.0.cmp(&b.0));
        self.entries.dedup_by(|a, b| a.0 == b.0);
        let mut body = Vec::new();
        body.push(b'm');
        put_len(&mut body, self.entries.len());
        for (k, v) in self.entries {
            body.extend_from_slice(&k);
            body.extend_from_slice(&v);
        }
        match self.variant {
            None => self.out.extend_from_slice(&body),
            Some(name) => wrap_variant(self.out, name, body),
        }
    }
}

pub struct VariantSeq<'a>(SeqEncoder<'a>, &'static str);

impl<'a> ser::Serializer for Encoder<'a> {
    type Ok = ();
    type Error = SerializationError;
    type SerializeSeq = SeqEncoder<'a>;
    type SerializeTuple = SeqEncoder<'a>;
    type SerializeTupleStruct = SeqEncoder<'a>;
    type SerializeTupleVariant = VariantSeq<'a>;
    type SerializeMap = MapEncoder<'a>;
    type SerializeStruct = MapEncoder<'a>;
    type SerializeStructVariant = MapEncoder<'a>;

    fn serialize_bool(self, v: bool) -> Result<(), Self::Error> {
        self.out.push(if v { b't' } else { b'f' });
        Ok(())
    }
    fn serialize_i8(self, v: i8) -> Result<(), Self::Error> {
        self.serialize_i64(v as i64)
    }
    fn serialize_i16(self, v: i16) -> Result<(), Self::Error> {
        self.serialize_i64(v as i64)
    }
    fn serialize_i32(self, v: i32) -> Result<(), Self::Error> {
        self.serialize_i64(v as i64)
    }
    fn serialize_i64(self, v: i64) -> Result<(), Self::Error> {
        put_chunk(self.out, b'i', v.to_string().as_bytes());
        Ok(())
    }
    fn serialize_i128(self, v: i128) -> Result<(), Self::Error> {
        put_chunk(self.out, b'i', v.to_string().as_bytes());
        Ok(())
    }
    fn serialize_u8(self, v: u8) -> Result<(), Self::Error> {
        self.serialize_u64(v as u64)
    }
    fn serialize_u16(self, v: u16) -> Result<(), Self::Error> {
        self.serialize_u64(v as u64)
    }
    fn serialize_u32(self, v: u32) -> Result<(), Self::Error> {
        self.serialize_u64(v as u64)
    }
    fn serialize_u64(self, v: u64) -> Result<(), Self::Error> {
        put_chunk(self.out, b'i', v.to_string().as_bytes());
        Ok(())
    }
    fn serialize_u128(self, v: u128) -> Result<(), Self::Error> {
        put_chunk(self.out, b'i', v.to_string().as_bytes());
        Ok(())
    }
    fn serialize_f32(self, v: f32) -> Result<(), Self::Error> {
        put_real(self.out, v as f64)
    }
    fn serialize_f64(self, v: f64) -> Result<(), Self::Error> {
        put_real(self.out, v)
    }
    fn serialize_char(self, v: char) -> Result<(), Self::Error> {
        let mut buf = [0u8; 4];
        put_chunk(self.out, b's', v.encode_utf8(&mut buf).as_bytes());
        Ok(())
    }
    fn serialize_str(self, v: &str) -> Result<(), Self::Error> {
        put_chunk(self.out, b's', v.as_bytes());
        Ok(())
    }
    fn serialize_bytes(self, v: &[u8]) -> Result<(), Self::Error> {
        put_chunk(self.out, b'b', v);
        Ok(())
    }
    fn serialize_none(self) -> Result<(), Self::Error> {
        self.serialize_unit()
    }
    fn serialize_some<T: Serialize + ?Sized>(self, value: &T) -> Result<(), Self::Error> {
        value.serialize(self)
    }
    fn serialize_unit(self) -> Result<(), Self::Error> {
        self.out.push(b'n');
        Ok(())
    }
    fn serialize_unit_struct(self, _name: &'static str) -> Result<(), Self::Error> {
        self.serialize_unit()
    }
    fn serialize_unit_variant(
        self,
        _name: &'static str,
        _idx: u32,
        variant: &'static str,
    ) -> Result<(), Self::Error> {
        self.serialize_str(variant)
    }
    fn serialize_newtype_struct<T: Serialize + ?Sized>(
        self,
        _name: &'static str,
        value: &T,
    ) -> Result<(), Self::Error> {
        value.serialize(self)
    }
    fn serialize_newtype_variant<T: Serialize + ?Sized>(
        self,
        _name: &'static str,
        _idx: u32,
        variant: &'static str,
        value: &T,
    ) -> Result<(), Self::Error> {
        let body = to_bytes(value)?;
        wrap_variant(self.out, variant, body);
        Ok(())
    }
    fn serialize_seq(self, len: Option<usize>) -> Result<Self::SerializeSeq, Self::Error> {
        Ok(SeqEncoder { out: self.out, items: Vec::with_capacity(len.unwrap_or(0)) })
    }
    fn serialize_tuple(self, len: usize) -> Result<Self::SerializeTuple, Self::Error> {
        self.serialize_seq(Some(len))
    }
    fn serialize_tuple_struct(
        self,
        _name: &'static str,
        len: usize,
    ) -> Result<Self::SerializeTupleStruct, Self::Error> {
        self.serialize_seq(Some(len))
    }
    fn serialize_tuple_variant(
        self,
        _name: &'static str,
        _idx: u32,
        variant: &'static str,
        len: usize,
    ) -> Result<Self::SerializeTupleVariant, Self::Error> {
        Ok(VariantSeq(SeqEncoder { out: self.out, items: Vec::with_capacity(len) }, variant))
    }
    fn serialize_map(self, _len: Option<usize>) -> Result<Self::SerializeMap, Self::Error> {
        Ok(MapEncoder { out: self.out, entries: Vec::new(), pending_key: None, variant: None })
    }
    fn serialize_struct(
        self,
        _name: &'static str,
        _len: usize,
    ) -> Result<Self::SerializeStruct, Self::Error> {
        self.serialize_map(None)
    }
    fn serialize_struct_variant(
        self,
        _name: &'static str,
        _idx: u32,
        variant: &'static str,
        _len: usize,
    ) -> Result<Self::SerializeStructVariant, Self::Error> {
        Ok(MapEncoder {
            out: self.out,
            entries: Vec::new(),
            pending_key: None,
            variant: Some(variant),
        })
    }
}

impl ser::SerializeSeq for SeqEncoder<'_> {
    type Ok = ();
    type Error = SerializationError;
    fn serialize_element<T: Serialize + ?Sized>(&mut self, v: &T) -> Result<(), Self::Error> {
        self.push(v)
    }
    fn end(self) -> Result<(), Self::Error> {
        self.finish(None);
        Ok(())
    }
}

impl ser::SerializeTuple for SeqEncoder<'_> {
    type Ok = ();
    type Error = SerializationError;
    fn serialize_element<T: Serialize + ?Sized>(&mut self, v: &T) -> Result<(), Self::Error> {
        self.push(v)
    }
    fn end(self) -> Result<(), Self::Error> {
        self.finish(None);
        Ok(())
    }
}

impl ser::SerializeTupleStruct for SeqEncoder<'_> {
    type Ok = ();
    type Error = SerializationError;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, v: &T) -> Result<(), Self::Error> {
        self.push(v)
    }
    fn end(self) -> Result<(), Self::Error> {
        self.finish(None);
        Ok(())
    }
}

impl ser::SerializeTupleVariant for VariantSeq<'_> {
    type Ok = ();
    type Error = SerializationError;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, v: &T) -> Result<(), Self::Error> {
        self.0.push(v)
    }
    fn end(self) -> Result<(), Self::Error> {
        self.0.finish(Some(self.1));
        Ok(())
    }
}

impl ser::SerializeMap for MapEncoder<'_> {
    type Ok = ();
    type Error = SerializationError;
    fn serialize_key<T: Serialize + ?Sized>(&mut self, key: &T) -> Result<(), Self::Error> {
        self.pending_key = Some(to_bytes(key)?);
        Ok(())
    }
    fn serialize_value<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), Self::Error> {
        let key = self
            .pending_key
            .take()
            .ok_or_else(|| SerializationError::Custom("map value without key".into()))?;
        self.entries.push((key, to_bytes(value)?));
        Ok(())
    }
    fn end(self) -> Result<(), Self::Error> {
        self.finish();
        Ok(())
    }
}

impl ser::SerializeStruct for MapEncoder<'_> {
    type Ok = ();
    type Error = SerializationError;
    fn serialize_field<T: Serialize + ?Sized>(
        &mut self,
        key: &'static str,
        value: &T,
    ) -> Result<(), Self::Error> {
        self.entries.push((to_bytes(key)?, to_bytes(value)?));
        Ok(())
    }
    fn end(self) -> Result<(), Self::Error> {
        self.finish();
        Ok(())
    }
}

impl ser::SerializeStructVariant for MapEncoder<'_> {
    type Ok = ();
    type Error = SerializationError;
    fn serialize_field<T: Serialize + ?Sized>(
        &mut self,
        key: &'static str,
        value: &T,
    ) -> Result<(), Self::Error> {
        self.entries.push((to_bytes(key)?, to_bytes(value)?));
        Ok(())
    }
    fn end(self) -> Result<(), Self::Error> {
        self.finish();
        Ok(())
    }
}

/// Decodes one canonically encoded value into JSON form.
pub fn from_bytes(bytes: &[u8]) -> Result<Value, DecodeError> {
    let mut pos = 0;
    let v = decode_value(bytes, &mut pos)?;
    if pos != bytes.len() {
        return Err(DecodeError::Trailing(bytes.len() - pos));
    }
    Ok(v)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8], DecodeError> {
    let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or(DecodeError::Truncated(*pos))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn take_len(bytes: &[u8], pos: &mut usize) -> Result<usize, DecodeError> {
    let raw = take(bytes, pos, 8)?;
    let mut buf = [0u8; 8];
    buf.copy_from_slice(raw);
    usize::try_from(u64::from_be_bytes(buf)).map_err(|_| DecodeError::BadScalar(*pos))
}

fn decode_value(bytes: &[u8], pos: &mut usize) -> Result<Value, DecodeError> {
    let at = *pos;
    let tag = *take(bytes, pos, 1)?.first().ok_or(DecodeError::Truncated(at))?;
    Ok(match tag {
        b'n' => Value::Null,
        b't' => Value::Bool(true),
        b'f' => Value::Bool(false),
        b'i' => {
            let len = take_len(bytes, pos)?;
            let text = std::str::from_utf8(take(bytes, pos, len)?).map_err(|_| DecodeError::BadScalar(at))?;
            if let Ok(u) = text.parse::<u64>() {
                Value::Number(u.into())
            } else if let Ok(i) = text.parse::<i64>() {
                Value::Number(i.into())
            } else {
                return Err(DecodeError::BadScalar(at));
            }
        }
        b'r' => {
            let len = take_len(bytes, pos)?;
            let text = std::str::from_utf8(take(bytes, pos, len)?).map_err(|_| DecodeError::BadScalar(at))?;
            let v: f64 = text.parse().map_err(|_| DecodeError::BadScalar(at))?;
            Value::Number(Number::from_f64(v).ok_or(DecodeError::BadScalar(at))?)
        }
        b's' => {
            let len = take_len(bytes, pos)?;
            let text = std::str::from_utf8(take(bytes, pos, len)?).map_err(|_| DecodeError::BadScalar(at))?;
            Value::String(text.to_owned())
        }
        b'b' => {
            let len = take_len(bytes, pos)?;
            let raw = take(bytes, pos, len)?;
            Value::Array(raw.iter().map(|b| Value::Number((*b as u64).into())).collect())
        }
        b'l' => {
            let n = take_len(bytes, pos)?;
            let mut items = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                items.push(decode_value(bytes, pos)?);
            }
            Value::Array(items)
        }
        b'm' => {
            let n = take_len(bytes, pos)?;
            let mut map = Map::new();
            for _ in 0..n {
                let key_at = *pos;
                let Value::String(k) = decode_value(bytes, pos)? else {
                    return Err(DecodeError::NonStringKey(key_at));
                };
                let v = decode_value(bytes, pos)?;
                map.insert(k, v);
            }
            Value::Object(map)
        }
        other => return Err(DecodeError::UnknownTag { tag: other, offset: at }),
    })
}
