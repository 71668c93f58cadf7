# Models - Pydantic schemas



