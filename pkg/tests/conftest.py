import pytest

from uncoresim.config import SimConfig
from uncoresim.injector import campaign_context


def small_cfg(**kw) -> SimConfig:
    """Desk-scale default used across the unit tests."""
    base = dict(workload="checksum_stream", workload_size=256,
                snapshot_interval=5000, master_seed=3)
    base.update(kw)
    return SimConfig(**base)


@pytest.fixture(scope="session")
def checksum_cfg():
    return small_cfg()


@pytest.fixture(scope="session")
def checksum_ctx(checksum_cfg):
    return campaign_context(checksum_cfg)
