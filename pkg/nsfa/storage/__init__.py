from functools import cache
from typing import Protocol

from dsnparse import parse

from nsfa.schema import StorageDriver


class Storage(Protocol):
    '''Text artifacts addressed by relative posix paths.'''

    def __init__(self, root: str) -> None:
        ...

    async def write(self, path: str, text: str) -> None:
        raise NotImplementedError()

    async def read(self, path: str) -> str:
        raise NotImplementedError()

    async def list(self, prefix: str = '') -> list[str]:
        raise NotImplementedError()

    async def exists(self, path: str) -> bool:
        return path in await self.list(path)

    async def write_all(self, files: dict[str, str]) -> None:
        for path, text in files.items():
            await self.write(path, text)


def parse_dsn(dsn: str) -> tuple[StorageDriver, str]:
    if '://' not in dsn:
        return StorageDriver.FILE, dsn

    info = parse(dsn)
    try:
        driver = StorageDriver(info.scheme)
    except ValueError:
        raise NotImplementedError(
            f'{info.scheme} storage not implemented'
        ) from None

    root = (info.host or '') + (info.path or '')
    return driver, root


@cache
def get_storage(dsn: str) -> Storage:
    driver, root = parse_dsn(dsn)
    return get_implementation(driver)(root)


@cache
def get_implementation(driver: StorageDriver) -> type[Storage]:
    if driver is StorageDriver.MEMORY:
        from nsfa.storage.memory import MemoryStorage
        return MemoryStorage

    if driver is StorageDriver.FILE:
        from nsfa.storage.file import FileStorage
        return FileStorage

    raise NotImplementedError(f'{driver} storage not implemented')
