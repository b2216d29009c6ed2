from nsfa.storage import Storage


class MemoryStorage(Storage):
    def __init__(self, root: str) -> None:
        self.root = root
        self.data: dict[str, str] = {}

    async def write(self, path: str, text: str) -> None:
        self.data[path] = text

    async def read(self, path: str) -> str:
        if path not in self.data:
            raise LookupError(f'{self.root}/{path} not found')
        return self.data[path]

    async def list(self, prefix: str = '') -> list[str]:
        return sorted(key for key in self.data if key.startswith(prefix))
