"""
Численное ядро: меры, стоимости, точный и мягкий транспорт, KR-отображения, динамика
"""
