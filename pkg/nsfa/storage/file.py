import logging

from anyio import Path

from nsfa.storage import Storage

logger = logging.getLogger(__name__)


class FileStorage(Storage):
    def __init__(self, root: str) -> None:
        self.root = Path(root or '.')

    async def write(self, path: str, text: str) -> None:
        target = self.root / path
        await target.parent.mkdir(parents=True, exist_ok=True)
        await target.write_text(text, encoding='utf-8')
        logger.debug('wrote %s', target)

    async def read(self, path: str) -> str:
        target = self.root / path
        if not await target.is_file():
            raise LookupError(f'{target} not found')
        return await target.read_text(encoding='utf-8')

    async def exists(self, path: str) -> bool:
        return await (self.root / path).is_file()

    async def list(self, prefix: str = '') -> list[str]:
        if not await self.root.exists():
            return []
        paths = []
        async for item in self.root.rglob('*'):
            if not await item.is_file():
                continue
            name = item.relative_to(self.root).as_posix()
            if name.startswith(prefix):
                paths.append(name)
        return sorted(paths)
