//! Line-oriented wire codec.
//!
//! One message per line, LF-terminated. Fields are `|`-separated; list
//! elements (adverts, services, unreachable pairs) are one field each
//! with `;`-separated components. Strings percent-encode the bytes
//! `|`, `;`, `%`, LF as `%7C`, `%3B`, `%25`, `%0A`; everything else
//! passes through as UTF-8.
//!
//! The encoding is canonical: `decode(encode(m)) == m` for every
//! structurally valid message (timestamps carry millisecond precision
//! on the wire), and `encode(decode(b)) == b` for every accepted byte
//! string. Decoding rejects anything outside the image, including
//! non-canonical numerals such as `007` or lowercase escape hex.

use super::{
    AdvertEntry, Data, ErrorId, Message, NodeId, RequestId, Rerr, ServiceEntry, ServiceQuery, Srep,
    Sreq, Timestamp, Ust,
};

/// Upper bound on any single string field, measured after escaping.
pub const MAX_FIELD_BYTES: usize = 1024;

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("string field `{field}` is {len} bytes after escaping (limit {MAX_FIELD_BYTES})")]
    FieldTooLong { field: &'static str, len: usize },
}

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
#[error("malformed message: {0}")]
pub struct MalformedMessage(pub String);

fn malformed(reason: impl Into<String>) -> MalformedMessage {
    MalformedMessage(reason.into())
}

/// Canonical encoding of a message, LF-terminated.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    let mut fields: Vec<String> = Vec::new();
    match msg {
        Message::Ust(ust) => {
            fields.push("UST".to_string());
            fields.push(ust.sender.to_string());
            fields.push(ust.sender_seq.to_string());
            fields.push(ust.adverts.len().to_string());
            for advert in &ust.adverts {
                fields.push(encode_advert(advert)?);
            }
        }
        Message::Sreq(sreq) => {
            fields.push("SREQ".to_string());
            fields.push(sreq.request_id.origin.to_string());
            fields.push(sreq.request_id.counter.to_string());
            fields.push(sreq.origin.to_string());
            fields.push(escape_field(
                &sreq.query.service_type,
                "query.service_type",
            )?);
            fields.push(match &sreq.query.service_name {
                Some(name) => escape_field(name, "query.service_name")?,
                None => String::new(),
            });
            fields.push(sreq.hop_count.to_string());
        }
        Message::Srep(srep) => {
            fields.push("SREP".to_string());
            fields.push(srep.request_id.origin.to_string());
            fields.push(srep.request_id.counter.to_string());
            fields.push(srep.origin.to_string());
            fields.push(srep.provider.to_string());
            fields.push(srep.hops_to_provider.to_string());
            fields.push(srep.services.len().to_string());
            for service in &srep.services {
                fields.push(encode_service(service)?);
            }
        }
        Message::Rerr(rerr) => {
            fields.push("RERR".to_string());
            fields.push(rerr.error_id.origin.to_string());
            fields.push(rerr.error_id.counter.to_string());
            fields.push(rerr.unreachable.len().to_string());
            for (destination, seq) in &rerr.unreachable {
                fields.push(format!("{destination};{seq}"));
            }
        }
        Message::Data(data) => {
            fields.push("DATA".to_string());
            fields.push(data.source.to_string());
            fields.push(data.destination.to_string());
            fields.push(escape_field(&data.payload_tag, "payload_tag")?);
        }
    }
    let mut line = fields.join("|");
    line.push('\n');
    Ok(line.into_bytes())
}

fn encode_service(service: &ServiceEntry) -> Result<String, EncodeError> {
    Ok(format!(
        "{};{};{};{};{}",
        service.provider,
        escape_field(&service.service_name, "service_name")?,
        escape_field(&service.service_type, "service_type")?,
        escape_field(&service.description, "description")?,
        format_timestamp(service.expiration_time),
    ))
}

fn encode_advert(advert: &AdvertEntry) -> Result<String, EncodeError> {
    Ok(format!(
        "{};{};{}",
        encode_service(&advert.service)?,
        advert.hops_to_provider,
        advert.provider_seq,
    ))
}

/// Inverse of [`encode_message`] on its image; rejects everything else.
pub fn decode_message(bytes: &[u8]) -> Result<Message, MalformedMessage> {
    if bytes.is_empty() {
        return Err(malformed("empty input"));
    }
    let (line, terminator) = bytes.split_at(bytes.len() - 1);
    if terminator != b"\n" {
        return Err(malformed("missing LF terminator"));
    }
    if line.contains(&b'\n') {
        return Err(malformed("embedded newline outside a string escape"));
    }
    let line = std::str::from_utf8(line).map_err(|_| malformed("invalid UTF-8"))?;
    let fields: Vec<&str> = line.split('|').collect();
    match fields[0] {
        "UST" => decode_ust(&fields),
        "SREQ" => decode_sreq(&fields),
        "SREP" => decode_srep(&fields),
        "RERR" => decode_rerr(&fields),
        "DATA" => decode_data(&fields),
        tag => Err(malformed(format!("unknown tag `{tag}`"))),
    }
}

fn decode_ust(fields: &[&str]) -> Result<Message, MalformedMessage> {
    if fields.len() < 4 {
        return Err(malformed("UST needs at least 4 fields"));
    }
    let sender = parse_node_id(fields[1])?;
    let sender_seq = parse_u64(fields[2])?;
    let count = parse_count(fields[3])?;
    if count == 0 {
        return Err(malformed("UST must carry at least one advert"));
    }
    if fields.len() - 4 != count {
        return Err(malformed("UST advert count does not match field count"));
    }
    let adverts = fields[4..]
        .iter()
        .map(|group| decode_advert(group))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Message::Ust(Ust {
        sender,
        sender_seq,
        adverts,
    }))
}

fn decode_sreq(fields: &[&str]) -> Result<Message, MalformedMessage> {
    if fields.len() != 7 {
        return Err(malformed("SREQ needs exactly 7 fields"));
    }
    let request_id = RequestId {
        origin: parse_node_id(fields[1])?,
        counter: parse_u64(fields[2])?,
    };
    let origin = parse_node_id(fields[3])?;
    let service_type = unescape_field(fields[4])?;
    if service_type.is_empty() {
        return Err(malformed("query service type must be non-empty"));
    }
    let name = unescape_field(fields[5])?;
    let service_name = if name.is_empty() { None } else { Some(name) };
    let hop_count = parse_u32(fields[6])?;
    Ok(Message::Sreq(Sreq {
        request_id,
        origin,
        query: ServiceQuery {
            service_type,
            service_name,
        },
        hop_count,
    }))
}

fn decode_srep(fields: &[&str]) -> Result<Message, MalformedMessage> {
    if fields.len() < 7 {
        return Err(malformed("SREP needs at least 7 fields"));
    }
    let request_id = RequestId {
        origin: parse_node_id(fields[1])?,
        counter: parse_u64(fields[2])?,
    };
    let origin = parse_node_id(fields[3])?;
    let provider = parse_node_id(fields[4])?;
    let hops_to_provider = parse_u32(fields[5])?;
    let count = parse_count(fields[6])?;
    if fields.len() - 7 != count {
        return Err(malformed("SREP service count does not match field count"));
    }
    let services = fields[7..]
        .iter()
        .map(|group| decode_service(group))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Message::Srep(Srep {
        request_id,
        origin,
        provider,
        services,
        hops_to_provider,
    }))
}

fn decode_rerr(fields: &[&str]) -> Result<Message, MalformedMessage> {
    if fields.len() < 4 {
        return Err(malformed("RERR needs at least 4 fields"));
    }
    let error_id = ErrorId {
        origin: parse_node_id(fields[1])?,
        counter: parse_u64(fields[2])?,
    };
    let count = parse_count(fields[3])?;
    if fields.len() - 4 != count {
        return Err(malformed("RERR pair count does not match field count"));
    }
    let unreachable = fields[4..]
        .iter()
        .map(|group| {
            let items: Vec<&str> = group.split(';').collect();
            if items.len() != 2 {
                return Err(malformed("unreachable pair needs 2 components"));
            }
            Ok((parse_node_id(items[0])?, parse_u64(items[1])?))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Message::Rerr(Rerr {
        error_id,
        unreachable,
    }))
}

fn decode_data(fields: &[&str]) -> Result<Message, MalformedMessage> {
    if fields.len() != 4 {
        return Err(malformed("DATA needs exactly 4 fields"));
    }
    Ok(Message::Data(Data {
        source: parse_node_id(fields[1])?,
        destination: parse_node_id(fields[2])?,
        payload_tag: unescape_field(fields[3])?,
    }))
}

fn decode_service_items(items: &[&str]) -> Result<ServiceEntry, MalformedMessage> {
    let provider = parse_node_id(items[0])?;
    let service_name = unescape_field(items[1])?;
    let service_type = unescape_field(items[2])?;
    if service_name.is_empty() || service_type.is_empty() {
        return Err(malformed("service name and type must be non-empty"));
    }
    let description = unescape_field(items[3])?;
    let expiration_time = parse_timestamp(items[4])?;
    Ok(ServiceEntry {
        provider,
        service_name,
        service_type,
        description,
        expiration_time,
    })
}

fn decode_service(group: &str) -> Result<ServiceEntry, MalformedMessage> {
    let items: Vec<&str> = group.split(';').collect();
    if items.len() != 5 {
        return Err(malformed("service group needs 5 components"));
    }
    decode_service_items(&items)
}

fn decode_advert(group: &str) -> Result<AdvertEntry, MalformedMessage> {
    let items: Vec<&str> = group.split(';').collect();
    if items.len() != 7 {
        return Err(malformed("advert group needs 7 components"));
    }
    Ok(AdvertEntry {
        service: decode_service_items(&items[..5])?,
        hops_to_provider: parse_u32(items[5])?,
        provider_seq: parse_u64(items[6])?,
    })
}

fn escape_field(raw: &str, field: &'static str) -> Result<String, EncodeError> {
    let mut out = String::with_capacity(raw.len());
    for ch in raw.chars() {
        match ch {
            '|' => out.push_str("%7C"),
            ';' => out.push_str("%3B"),
            '%' => out.push_str("%25"),
            '\n' => out.push_str("%0A"),
            other => out.push(other),
        }
    }
    if out.len() > MAX_FIELD_BYTES {
        return Err(EncodeError::FieldTooLong {
            field,
            len: out.len(),
        });
    }
    Ok(out)
}

fn unescape_field(field: &str) -> Result<String, MalformedMessage> {
    if field.len() > MAX_FIELD_BYTES {
        return Err(malformed("string field exceeds the length limit"));
    }
    let bytes = field.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'%' => {
                let replacement = match bytes.get(i + 1..i + 3) {
                    Some(b"7C") => b'|',
                    Some(b"3B") => b';',
                    Some(b"25") => b'%',
                    Some(b"0A") => b'\n',
                    _ => return Err(malformed("invalid percent escape")),
                };
                out.push(replacement);
                i += 3;
            }
            // Reserved bytes are always escaped on the wire; a raw one
            // here would break the canonical-form guarantee.
            b';' | b'|' | b'\n' => return Err(malformed("unescaped reserved byte")),
            other => {
                out.push(other);
                i += 1;
            }
        }
    }
    String::from_utf8(out).map_err(|_| malformed("invalid UTF-8 in string field"))
}

/// 3 fractional digits, `inf` for positive infinity.
fn format_timestamp(value: Timestamp) -> String {
    format!("{value:.3}")
}

fn parse_timestamp(text: &str) -> Result<Timestamp, MalformedMessage> {
    let value: f64 = text
        .parse()
        .map_err(|_| malformed(format!("invalid timestamp `{text}`")))?;
    if value.is_nan() || value.is_sign_negative() {
        return Err(malformed(format!("timestamp out of range `{text}`")));
    }
    if format_timestamp(value) != text {
        return Err(malformed(format!("non-canonical timestamp `{text}`")));
    }
    Ok(value)
}

fn parse_u64(text: &str) -> Result<u64, MalformedMessage> {
    if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed(format!("invalid number `{text}`")));
    }
    if text.len() > 1 && text.starts_with('0') {
        return Err(malformed(format!("non-canonical number `{text}`")));
    }
    text.parse()
        .map_err(|_| malformed(format!("number out of range `{text}`")))
}

fn parse_u32(text: &str) -> Result<u32, MalformedMessage> {
    u32::try_from(parse_u64(text)?).map_err(|_| malformed(format!("number out of range `{text}`")))
}

fn parse_node_id(text: &str) -> Result<NodeId, MalformedMessage> {
    Ok(NodeId(parse_u32(text)?))
}

fn parse_count(text: &str) -> Result<usize, MalformedMessage> {
    usize::try_from(parse_u64(text)?).map_err(|_| malformed(format!("count out of range `{text}`")))
}
