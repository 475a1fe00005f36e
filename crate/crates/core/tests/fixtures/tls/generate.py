"""Regenerates the frozen TLS handshake fixtures.

Each fixture is a real TLS 1.2 handshake between Python's ssl client and
server over memory BIOs. The client's first flight and the server's first
flight are written as raw bytes; expected values come from the certificate
objects used to build the server.
"""
import datetime
import json
import pathlib
import ssl
import tempfile

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.x509.oid import NameOID

OUT = pathlib.Path(__file__).parent
UTC = datetime.timezone.utc


def name(cn):
    return x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, cn)])


def cert(subject_cn, key, issuer_cn, issuer_key, not_before, not_after):
    return (
        x509.CertificateBuilder()
        .subject_name(name(subject_cn))
        .issuer_name(name(issuer_cn))
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(not_before)
        .not_valid_after(not_after)
        .sign(issuer_key, hashes.SHA256())
    )


def handshake(chain, key, sni):
    with tempfile.TemporaryDirectory() as d:
        certfile = pathlib.Path(d, "c.pem")
        keyfile = pathlib.Path(d, "k.pem")
        certfile.write_bytes(b"".join(c.public_bytes(serialization.Encoding.PEM) for c in chain))
        keyfile.write_bytes(
            key.private_bytes(
                serialization.Encoding.PEM,
                serialization.PrivateFormat.PKCS8,
                serialization.NoEncryption(),
            )
        )
        sctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        sctx.maximum_version = ssl.TLSVersion.TLSv1_2
        sctx.load_cert_chain(certfile, keyfile)
    cctx = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
    cctx.check_hostname = False
    cctx.verify_mode = ssl.CERT_NONE
    cctx.maximum_version = ssl.TLSVersion.TLSv1_2
    c_in, c_out, s_in, s_out = (ssl.MemoryBIO() for _ in range(4))
    client = cctx.wrap_bio(c_in, c_out, server_hostname=sni)
    server = sctx.wrap_bio(s_in, s_out, server_side=True)
    try:
        client.do_handshake()
    except ssl.SSLWantReadError:
        pass
    client_flight = c_out.read()
    s_in.write(client_flight)
    try:
        server.do_handshake()
    except ssl.SSLWantReadError:
        pass
    server_flight = s_out.read()
    return client_flight, server_flight


def main():
    now = datetime.datetime(2016, 6, 1, tzinfo=UTC)
    ca_key = ec.generate_private_key(ec.SECP256R1())
    leaf_key = ec.generate_private_key(ec.SECP256R1())
    cases = {
        "self_signed": (
            lambda: [cert("selfsigned.example.com", leaf_key, "selfsigned.example.com", leaf_key,
                          datetime.datetime(2015, 1, 1, tzinfo=UTC), datetime.datetime(2030, 1, 1, tzinfo=UTC))],
            "selfsigned.example.com", False, True,
        ),
        "expired_ca_signed": (
            lambda: [cert("expired.example.net", leaf_key, "Fixture Root", ca_key,
                          datetime.datetime(2013, 1, 1, tzinfo=UTC), datetime.datetime(2015, 1, 1, tzinfo=UTC))],
            "expired.example.net", True, False,
        ),
        "valid_ca_signed": (
            lambda: [cert("shop.example.co.uk", leaf_key, "Fixture Root", ca_key,
                          datetime.datetime(2015, 1, 1, tzinfo=UTC), datetime.datetime(2018, 1, 1, tzinfo=UTC))],
            "www.shop.example.co.uk", False, False,
        ),
    }
    manifest = []
    for stem, (chain, sni, expired, self_signed) in cases.items():
        client, server = handshake(chain(), leaf_key, sni)
        (OUT / f"{stem}.client.bin").write_bytes(client)
        (OUT / f"{stem}.server.bin").write_bytes(server)
        manifest.append({
            "name": stem,
            "sni": sni,
            "version": "tls1_2",
            "cert_expired": expired,
            "cert_self_signed": self_signed,
            "observed_at_us": int(now.timestamp()) * 1_000_000,
        })
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
