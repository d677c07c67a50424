import pytest

from chelonia.config import CONFIG_ENV, ClientConfig, ConfigError, ServerConfig, load_client_config, load_server_config
from chelonia.harness import Topology


def test_client_config_from_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[client]\nbartenders = http://a:1,\n  http://b:2\nneeded_replicas = 3\ndn = CN=me\nattempts = 2\n")
    cfg = load_client_config(p)
    assert cfg.bartender_urls == ["http://a:1", "http://b:2"]
    assert (cfg.needed_replicas, cfg.identity_dn, cfg.attempts, cfg.backoff) == (3, "CN=me", 2, 0.5)


def test_client_config_env_override(tmp_path, monkeypatch):
    p = tmp_path / "env.ini"
    p.write_text("[client]\nbartenders = http://x\n")
    monkeypatch.setenv(CONFIG_ENV, str(p))
    assert load_client_config().bartender_urls == ["http://x"]


@pytest.mark.parametrize("text", ["[client]\n", "[client]\nbartenders = http://x\nneeded_replicas = 0\n",
                                  "[other]\n", "[client]\nbartenders = http://x\nattempts = zero\n"])
def test_client_config_invalid(tmp_path, text):
    p = tmp_path / "bad.ini"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_client_config(p)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_client_config(tmp_path / "missing.ini")


def test_client_config_validation():
    with pytest.raises(ConfigError):
        ClientConfig([])


def test_server_config(tmp_path):
    p = tmp_path / "s.ini"
    p.write_text("[server]\nport = 9000\ndata_dir = /tmp/x\nseed = 4\n\n[topology]\nahash = 3\nshepherds = 2\n")
    cfg = load_server_config(p)
    assert (cfg.port, cfg.seed, cfg.public_url) == (9000, 4, "http://127.0.0.1:9000")
    t = cfg.topology
    assert (t.ahash, t.shepherds, t.latency, t.data_dir) == (3, 2, 0.0, "/tmp/x")
    assert t.turl_base == "http://127.0.0.1:9000/transfer/{host}"


def test_server_config_defaults():
    cfg = ServerConfig(Topology(shepherds=1), public_url="https://storage.example/")
    assert cfg.transfer_base() == "https://storage.example/transfer/{host}"
