"""
Точка входа: эксперименты с пределами Кнёте-Розенблатта
"""
import asyncio
import sys

from handlers.commands import handle
from utils.logger import logger


async def main() -> int:
    """Главная функция"""
    return await handle(sys.argv[1:])


if __name__ == "__main__":
    try:
        sys.exit(asyncio.run(main()))
    except KeyboardInterrupt:
        logger.info("Получен сигнал остановки")
        sys.exit(130)
    except Exception as e:
        logger.error(f"Критическая ошибка: {e}", exc_info=True)
        sys.exit(1)
