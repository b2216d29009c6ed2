from pathlib import Path

from pytest import mark, raises

from nsfa.schema import StorageDriver
from nsfa.storage import get_implementation, get_storage, parse_dsn
from nsfa.storage.file import FileStorage
from nsfa.storage.memory import MemoryStorage


def storage_dsn(driver: StorageDriver, tmp_path: Path) -> str:
    if driver is StorageDriver.MEMORY:
        return f'memory://{tmp_path.name}'
    return f'file://{tmp_path}'


@mark.asyncio
@mark.parametrize('driver', [StorageDriver.MEMORY, StorageDriver.FILE])
async def test_hello(driver: StorageDriver, tmp_path: Path):
    storage = get_storage(storage_dsn(driver, tmp_path))
    assert await storage.list() == []
    assert not await storage.exists('chain-0/trace.csv')

    await storage.write_all({
        'chain-0/trace.csv': 'iteration,k_active\n1,3\n',
        'chain-0/samples/1/G.csv': '1.0\n',
        'manifest.json': '{}\n',
    })

    assert await storage.exists('chain-0/trace.csv')
    assert await storage.read('chain-0/trace.csv') == (
        'iteration,k_active\n1,3\n'
    )
    assert await storage.list('chain-0/') == [
        'chain-0/samples/1/G.csv', 'chain-0/trace.csv',
    ]

    # overwrite
    await storage.write('manifest.json', '{"files": {}}\n')
    assert await storage.read('manifest.json') == '{"files": {}}\n'

    with raises(LookupError):
        await storage.read('chain-1/trace.csv')


def test_parse_dsn():
    assert parse_dsn('runs/nsfa') == (StorageDriver.FILE, 'runs/nsfa')
    assert parse_dsn('file:///tmp/run') == (StorageDriver.FILE, '/tmp/run')
    assert parse_dsn('memory://run') == (StorageDriver.MEMORY, 'run')
    with raises(NotImplementedError):
        parse_dsn('tarantool://tarantool:3301')


def test_storage_is_cached_per_dsn():
    assert get_storage('memory://cached') is get_storage('memory://cached')
    assert get_storage('memory://cached') is not get_storage('memory://other')
    assert isinstance(get_storage('memory://cached'), MemoryStorage)
    assert get_implementation(StorageDriver.FILE) is FileStorage
